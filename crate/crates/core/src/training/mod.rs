//! Link-prediction loss, optimizer, the chronological training loop with
//! scheduled hard-negative mining, and the gradient-variance probe.

mod loss;
mod optim;
mod probe;
mod score;

use std::collections::HashMap;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use loss::{batch_link_loss, link_loss, link_loss_value, negative_term};
pub use optim::{sgd_step, Optimizer, OptimizerKind, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON};
pub use probe::{gradient_variance_probe, spearman, VarianceProbeReport};
pub use score::{pair_score, PairScorer};

use crate::evaluation::{evaluate, CandidatePolicy, EvalError, RankingMetrics};
use crate::graph::{NodeId, Partition, Split, TemporalGraph};
use crate::model::{ModelConfig, ModelError, ModelState};
use crate::numerics::{NumericsError, Precision};
use crate::sampling::{
    build_static_distribution, draw_negatives, negative_universe, refresh_snapshot, CandidateCache, EmbeddingSnapshot,
    SamplerConfig, SamplerContext, SamplingError, StaticDistribution, Strategy, TopkMemo,
};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("gradient for unknown parameter {0}")]
    UnknownParameter(String),
    #[error("gradient shape mismatch for {name}")]
    GradientShape { name: String },
    #[error("non-finite gradient in {name} at entry {index}")]
    NonFiniteGradient { name: String, index: usize },
    #[error("non-finite loss in epoch {epoch}, batch {batch} (first ordinal {first_ordinal}): {source}")]
    NonFiniteLoss { epoch: usize, batch: usize, first_ordinal: usize, source: NumericsError },
    #[error("empty training range")]
    EmptyTrainRange,
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl From<NumericsError> for TrainError {
    fn from(e: NumericsError) -> Self {
        TrainError::Model(ModelError::Numerics(e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StoppingRule {
    MaxEpochs,
    /// Stop once validation MRR has not improved for `patience` epochs.
    Patience,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub stopping: StoppingRule,
    pub patience: usize,
    pub precision: Precision,
    /// Candidates used for per-epoch validation ranking.
    pub validation_policy: CandidatePolicy,
    pub sampler: SamplerConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 200,
            learning_rate: 1e-4,
            optimizer: OptimizerKind::Adam,
            seed: 0,
            stopping: StoppingRule::Patience,
            patience: 5,
            precision: Precision::Fast,
            validation_policy: CandidatePolicy::AllNodes,
            sampler: SamplerConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate > 0.0) {
            return Err(TrainError::Config("learning_rate must be positive".into()));
        }
        if self.batch_size < 1 {
            return Err(TrainError::Config("batch_size must be at least 1".into()));
        }
        if self.stopping == StoppingRule::Patience && self.patience < 1 {
            return Err(TrainError::Config("patience must be at least 1".into()));
        }
        self.sampler.validate()?;
        Ok(())
    }
}

/// One optimizer step's record.
#[derive(Debug, Clone, PartialEq)]
pub struct LossRecord {
    pub epoch: usize,
    pub batch: usize,
    pub loss: f64,
    /// Mean score of each negative slot over the batch.
    pub negative_scores: Vec<f64>,
    pub strategy: Strategy,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation: Option<RankingMetrics>,
    pub wall_time_s: f64,
    pub refreshes: usize,
}

impl EpochMetrics {
    pub const HEADER: &'static str = "epoch,train_loss,val_mrr,val_recall@1,val_recall@5,val_recall@10,wall_time_s";

    /// One delimited line in [`Self::HEADER`] order; absent values are empty.
    pub fn to_delimited(&self) -> String {
        let v = |f: &dyn Fn(&RankingMetrics) -> f64| self.validation.as_ref().map_or(String::new(), |m| f(m).to_string());
        format!(
            "{},{},{},{},{},{},{}",
            self.epoch,
            self.train_loss,
            v(&|m| m.mrr),
            v(&|m| m.recall(1)),
            v(&|m| m.recall(5)),
            v(&|m| m.recall(10)),
            self.wall_time_s
        )
    }
}

/// Hooks into the training loop. Every method defaults to doing nothing.
pub trait TrainObserver {
    fn on_refresh(&mut self, _epoch: usize, _batch: usize, _snapshot: &EmbeddingSnapshot) {}
    /// Called after the batch's candidate lists were recomputed.
    fn on_candidates(&mut self, _epoch: usize, _batch: usize, _cache: &CandidateCache) {}
    fn on_negatives(&mut self, _epoch: usize, _ordinal: usize, _negatives: &[NodeId]) {}
    fn on_batch(&mut self, _first_ordinal: usize, _record: &LossRecord) {}
    /// Sees the loss before the optimizer step, with the state it was
    /// computed from.
    fn on_batch_loss(&mut self, _state: &ModelState, _first_ordinal: usize, _loss: f64) {}
    fn on_epoch(&mut self, _metrics: &EpochMetrics, _cache: &CandidateCache) {}
}

impl TrainObserver for () {}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// The state after the epoch with the best validation MRR (the final
    /// state when there is no validation range). Its memory has been rolled
    /// through the validation interactions.
    pub best: ModelState,
    pub best_epoch: Option<usize>,
    pub last: ModelState,
    pub history: Vec<EpochMetrics>,
    pub losses: Vec<LossRecord>,
}

fn universes(graph: &TemporalGraph, restrict: bool) -> HashMap<Partition, Vec<NodeId>> {
    let mut out = HashMap::new();
    for part in [Partition::Source, Partition::Target, Partition::None] {
        if let Some(u) = graph.nodes_in(part).first() {
            out.insert(part, negative_universe(graph, *u, restrict));
        }
    }
    out
}

/// Trains on `split.train` in chronological batches.
pub fn train(
    graph: &TemporalGraph,
    split: &Split,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome, TrainError> {
    let model = ModelState::new(model_cfg.clone(), graph, cfg.seed)?.with_precision(cfg.precision);
    train_from(model, graph, split, cfg, observer)
}

/// [`train`] starting from a given state.
pub fn train_from(
    mut model: ModelState,
    graph: &TemporalGraph,
    split: &Split,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if split.train.is_empty() {
        return Err(TrainError::EmptyTrainRange);
    }
    let sampler = &cfg.sampler;
    let strategy = sampler.strategy;
    sampler.similarity.scorer(&model.params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6e65_6761_7469_7665);
    let universe = universes(graph, sampler.restrict_to_partition);
    let static_dist: Option<StaticDistribution> = if strategy == Strategy::StaticHn {
        let mut sc = sampler.static_model.clone();
        sc.seed ^= cfg.seed;
        Some(build_static_distribution(graph, split.train.clone(), &sc)?)
    } else {
        None
    };
    let names: Vec<String> = model.params.keys().cloned().collect();
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate);
    let mut cache = CandidateCache::new();
    let mut snapshot: Option<EmbeddingSnapshot> = None;
    let mut memo = TopkMemo::new();
    let mut history = Vec::new();
    let mut losses = Vec::new();
    let mut best: Option<(f64, usize, ModelState)> = None;
    let mut stale = 0;
    let train_events = &graph.interactions()[split.train.clone()];

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        model.reset_memory();
        let recompute = epoch % sampler.recompute_frequency == 0;
        let mut refreshes = 0;
        let mut loss_sum = 0.0;
        let mut loss_n = 0;
        for (b, batch) in train_events.chunks(cfg.batch_size).enumerate() {
            let first = batch[0].ordinal;
            if strategy.uses_cache() && recompute {
                if b % sampler.refresh_period == 0 {
                    let snap = refresh_snapshot(&model, graph, batch[0].time, first)?;
                    observer.on_refresh(epoch, b, &snap);
                    snapshot = Some(snap);
                    memo.clear();
                    refreshes += 1;
                }
                let snap = snapshot.as_ref().expect("refreshed at batch 0 of a recompute epoch");
                let scorer = sampler.similarity.scorer(&model.params)?;
                for e in batch {
                    let uni = &universe[&graph.partition(e.source)];
                    let list = memo.candidates(snap, e, sampler.top_k, uni, scorer)?;
                    cache.insert(e.ordinal, [e.source, e.target], list, epoch);
                }
                observer.on_candidates(epoch, b, &cache);
            }

            let mut negatives = Vec::with_capacity(batch.len());
            for e in batch {
                let mut ctx = SamplerContext {
                    interaction: *e,
                    graph,
                    horizon: first,
                    universe: &universe[&graph.partition(e.source)],
                    cache: &cache,
                    static_distribution: static_dist.as_ref(),
                    rng: &mut rng,
                };
                let negs = draw_negatives(sampler, &mut ctx)?;
                observer.on_negatives(epoch, e.ordinal, &negs);
                negatives.push(negs);
            }

            let q = strategy.negatives();
            let mut queries = Vec::with_capacity(batch.len() * (2 + q));
            for (e, negs) in batch.iter().zip(&negatives) {
                queries.push((e.source, e.time));
                queries.push((e.target, e.time));
                queries.extend(negs.iter().map(|&n| (n, e.time)));
            }
            let stride = 2 + q;
            let n = batch.len();
            let mut f = model.forward(graph).with_horizon(first);
            let h = f.embeddings(&queries);
            let src = f.expr.gather_rows(h, (0..n).map(|i| i * stride).collect());
            let dst = f.expr.gather_rows(h, (0..n).map(|i| i * stride + 1).collect());
            let pos = f.scores(dst, src, n);
            let src_rep = f.expr.gather_rows(h, (0..q).flat_map(|_| (0..n).map(|i| i * stride)).collect());
            let neg_rows = f.expr.gather_rows(h, (0..q).flat_map(|j| (0..n).map(move |i| i * stride + 2 + j)).collect());
            let neg = f.scores(neg_rows, src_rep, n * q);
            let loss = batch_link_loss(&mut f.expr, pos, neg, n);
            let tape = f.expr.forward(&model.params).map_err(|source| TrainError::NonFiniteLoss {
                epoch,
                batch: b,
                first_ordinal: first,
                source,
            })?;
            let loss_value = tape.value(loss).item();
            observer.on_batch_loss(&model, first, loss_value);
            let neg_values = tape.value(neg).data();
            let negative_scores = (0..q).map(|j| neg_values[j * n..(j + 1) * n].iter().sum::<f64>() / n as f64).collect();
            let grads = tape.backward(loss, &names, &model.params)?;
            let folded = f.folded().map(|fm| (fm.nodes.clone(), tape.value(fm.rows).clone()));
            drop(tape);
            opt.step(&mut model.params, &grads)?;
            if model.config.use_memory {
                if let Some((nodes, rows)) = folded {
                    model.memory.commit(&nodes, &rows);
                }
                model.memory.stage(batch).map_err(ModelError::from)?;
            }
            let record = LossRecord {
                epoch,
                batch: b,
                loss: loss_value,
                negative_scores,
                strategy,
                wall_time_s: started.elapsed().as_secs_f64(),
            };
            observer.on_batch(first, &record);
            loss_sum += loss_value;
            loss_n += 1;
            losses.push(record);
        }

        let mut validation = None;
        let mut after_val = model.clone();
        if !split.validation.is_empty() {
            let (m, _) =
                evaluate(&mut after_val, graph, split.validation.clone(), cfg.validation_policy, cfg.batch_size)?;
            validation = Some(m);
        }
        let metrics = EpochMetrics {
            epoch,
            train_loss: loss_sum / loss_n.max(1) as f64,
            validation: validation.clone(),
            wall_time_s: started.elapsed().as_secs_f64(),
            refreshes,
        };
        log::info!("{}", metrics.to_delimited());
        observer.on_epoch(&metrics, &cache);
        history.push(metrics);

        let score = validation.as_ref().map_or(f64::NEG_INFINITY, |m| m.mrr);
        let improved = best.as_ref().is_none_or(|(s, _, _)| score > *s);
        if improved {
            best = Some((score, epoch, after_val));
            stale = 0;
        } else {
            stale += 1;
        }
        if validation.is_none() {
            // Without validation the latest state is the one kept.
            best = Some((score, epoch, model.clone()));
        }
        if cfg.stopping == StoppingRule::Patience && validation.is_some() && stale >= cfg.patience {
            log::info!("early stop after epoch {epoch}");
            break;
        }
    }
    let (best_epoch, best_state) = match best {
        Some((_, e, s)) => (Some(e), s),
        None => (None, model.clone()),
    };
    Ok(TrainOutcome { best: best_state, best_epoch, last: model, history, losses })
}
