//! Negative-node selection: uniform, top-K nearest-neighbor hard negatives
//! with snapshot refresh and caching, nearest-only, and heuristic
//! baselines.

mod cache;
mod heuristic;
mod snapshot;

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use cache::CandidateCache;
pub use heuristic::{
    build_ifq_distribution, build_static_distribution, interaction_counts, static_objective, Categorical,
    StaticConfig, StaticDistribution,
};
pub use snapshot::{refresh_snapshot, topk_candidates, topk_within, EmbeddingSnapshot};

use crate::graph::{Interaction, NodeId, Partition, TemporalGraph};
use crate::model::{ModelError, ParamStore};
use crate::training::PairScorer;

#[derive(Debug, thiserror::Error)]
pub enum SamplingError {
    #[error("no candidate node remains after exclusion")]
    NoCandidates,
    #[error("no cached candidates for interaction {ordinal}; the cache must be built in a recompute epoch")]
    MissingCacheEntry { ordinal: usize },
    #[error("strategy {0} needs a static distribution")]
    MissingStaticDistribution(&'static str),
    #[error("invalid sampler configuration: {0}")]
    Config(String),
    #[error("cache spill file: {0}")]
    Spill(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Uniform,
    HardTopk,
    NearestOnly,
    StaticHn,
    IfqHn,
    HybridUnHn,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::Uniform,
        Strategy::HardTopk,
        Strategy::NearestOnly,
        Strategy::StaticHn,
        Strategy::IfqHn,
        Strategy::HybridUnHn,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Strategy::Uniform => "uniform",
            Strategy::HardTopk => "hard-topk",
            Strategy::NearestOnly => "nearest-only",
            Strategy::StaticHn => "static-hn",
            Strategy::IfqHn => "ifq-hn",
            Strategy::HybridUnHn => "hybrid-un-hn",
        }
    }

    /// Whether the strategy reads top-K lists from the candidate cache.
    pub fn uses_cache(self) -> bool {
        matches!(self, Strategy::HardTopk | Strategy::NearestOnly | Strategy::HybridUnHn)
    }

    /// Negatives drawn per interaction.
    pub fn negatives(self) -> usize {
        if self == Strategy::HybridUnHn {
            2
        } else {
            1
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|x| x.label() == s)
            .ok_or_else(|| format!("unknown strategy {s:?}"))
    }
}

/// Similarity used to rank hard-negative candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Similarity {
    Dot,
    Cosine,
    /// The model's own MLP link scorer.
    Mlp,
}

impl Similarity {
    pub fn scorer(self, params: &ParamStore) -> Result<PairScorer<'_>, SamplingError> {
        match self {
            Similarity::Dot => Ok(PairScorer::Dot),
            Similarity::Cosine => Ok(PairScorer::Cosine),
            Similarity::Mlp if params.contains_key("scorer.hidden.w") => Ok(PairScorer::Mlp(params)),
            Similarity::Mlp => Err(SamplingError::Config("mlp similarity requires the mlp-concat score mode".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub strategy: Strategy,
    /// Size of the nearest-neighbor list negatives are drawn from.
    pub top_k: usize,
    /// Batches between snapshot refreshes.
    pub refresh_period: usize,
    /// Epochs between candidate-list recomputations.
    pub recompute_frequency: usize,
    pub similarity: Similarity,
    /// Draw negatives only from the partition opposite to the source.
    pub restrict_to_partition: bool,
    #[serde(rename = "static")]
    pub static_model: StaticConfig,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Uniform,
            top_k: 5,
            refresh_period: 20,
            recompute_frequency: 1,
            similarity: Similarity::Dot,
            restrict_to_partition: false,
            static_model: StaticConfig::default(),
        }
    }
}

impl SamplerConfig {
    pub fn with_strategy(strategy: Strategy) -> Self {
        Self { strategy, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), SamplingError> {
        for (name, v) in [
            ("top_k", self.top_k),
            ("refresh_period", self.refresh_period),
            ("recompute_frequency", self.recompute_frequency),
        ] {
            if v < 1 {
                return Err(SamplingError::Config(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }
}

/// Nodes negatives for source `u` may come from.
pub fn negative_universe(graph: &TemporalGraph, u: NodeId, restrict_to_partition: bool) -> Vec<NodeId> {
    let opposite = match graph.partition(u) {
        Partition::Source => Some(Partition::Target),
        Partition::Target => Some(Partition::Source),
        Partition::None => None,
    };
    match opposite {
        Some(p) if restrict_to_partition => graph.nodes_in(p),
        _ => (0..graph.node_count() as NodeId).collect(),
    }
}

/// A uniform draw from `universe` (distinct ids) avoiding `exclude`.
pub fn sample_uniform<R: Rng + ?Sized>(
    universe: &[NodeId],
    exclude: &[NodeId],
    rng: &mut R,
) -> Result<NodeId, SamplingError> {
    if universe.is_empty() {
        return Err(SamplingError::NoCandidates);
    }
    for _ in 0..64 {
        let c = universe[rng.random_range(0..universe.len())];
        if !exclude.contains(&c) {
            return Ok(c);
        }
    }
    let rest: Vec<NodeId> = universe.iter().copied().filter(|c| !exclude.contains(c)).collect();
    if rest.is_empty() {
        return Err(SamplingError::NoCandidates);
    }
    Ok(rest[rng.random_range(0..rest.len())])
}

/// A uniform draw from the cached list of interaction `ordinal`.
pub fn sample_hard_negative<R: Rng + ?Sized>(
    cache: &CandidateCache,
    ordinal: usize,
    rng: &mut R,
) -> Result<NodeId, SamplingError> {
    let list = cache.get(ordinal).ok_or(SamplingError::MissingCacheEntry { ordinal })?;
    if list.is_empty() {
        return Err(SamplingError::NoCandidates);
    }
    Ok(list[rng.random_range(0..list.len())])
}

/// Per-source top-(K+1) lists under one snapshot, so interactions sharing a
/// source share the scan. Dropping the target from the source's list and
/// truncating to K gives exactly the top-K over the universe minus
/// `{u, v}`.
#[derive(Debug, Default)]
pub struct TopkMemo {
    per_source: HashMap<NodeId, Vec<NodeId>>,
}

impl TopkMemo {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn clear(&mut self) {
        self.per_source.clear();
    }

    pub fn candidates(
        &mut self,
        snapshot: &EmbeddingSnapshot,
        e: &Interaction,
        k: usize,
        universe: &[NodeId],
        scorer: PairScorer<'_>,
    ) -> Result<Vec<NodeId>, SamplingError> {
        let u = e.source;
        let list = match self.per_source.get(&u) {
            Some(l) => l,
            None => {
                let l = topk_within(snapshot, u, k + 1, universe.iter().copied(), &[u], scorer)?;
                self.per_source.entry(u).or_insert(l)
            }
        };
        let out: Vec<NodeId> = list.iter().copied().filter(|&c| c != e.target).take(k).collect();
        if out.is_empty() {
            return Err(SamplingError::NoCandidates);
        }
        Ok(out)
    }
}

/// What a sampler may consult for one interaction.
pub struct SamplerContext<'a, R: Rng + ?Sized> {
    pub interaction: Interaction,
    pub graph: &'a TemporalGraph,
    /// Interactions from this ordinal on are hidden from history-based
    /// samplers.
    pub horizon: usize,
    /// Ascending distinct ids negatives may come from.
    pub universe: &'a [NodeId],
    pub cache: &'a CandidateCache,
    pub static_distribution: Option<&'a StaticDistribution>,
    pub rng: &'a mut R,
}

/// Negatives for one interaction under the configured strategy. Nothing
/// returned is the interaction's source or target.
pub fn draw_negatives<R: Rng + ?Sized>(
    cfg: &SamplerConfig,
    ctx: &mut SamplerContext<'_, R>,
) -> Result<Vec<NodeId>, SamplingError> {
    let e = ctx.interaction;
    let exclude = [e.source, e.target];
    let uniform = |ctx: &mut SamplerContext<'_, R>| sample_uniform(ctx.universe, &exclude, ctx.rng);
    let out = match cfg.strategy {
        Strategy::Uniform => vec![uniform(ctx)?],
        Strategy::HardTopk => vec![sample_hard_negative(ctx.cache, e.ordinal, ctx.rng)?],
        Strategy::NearestOnly => {
            let list = ctx.cache.get(e.ordinal).ok_or(SamplingError::MissingCacheEntry { ordinal: e.ordinal })?;
            vec![*list.first().ok_or(SamplingError::NoCandidates)?]
        }
        Strategy::HybridUnHn => {
            let un = uniform(ctx)?;
            vec![un, sample_hard_negative(ctx.cache, e.ordinal, ctx.rng)?]
        }
        Strategy::StaticHn => {
            let dist = ctx.static_distribution.ok_or(SamplingError::MissingStaticDistribution("static-hn"))?;
            let restricted = ctx.universe.len() < ctx.graph.node_count();
            let mut pick = None;
            if !restricted {
                pick = dist.sample(e.source, &exclude, ctx.rng);
            } else {
                // Rejection keeps the conditional distribution exact; give up
                // on pathological universes and fall back to uniform.
                for _ in 0..256 {
                    match dist.sample(e.source, &exclude, ctx.rng) {
                        Some(w) if ctx.universe.binary_search(&w).is_ok() => {
                            pick = Some(w);
                            break;
                        }
                        Some(_) => continue,
                        None => break,
                    }
                }
            }
            match pick {
                Some(w) => vec![w],
                None => vec![uniform(ctx)?],
            }
        }
        Strategy::IfqHn => {
            let counts = interaction_counts(ctx.graph, e.source, e.time, ctx.horizon);
            let support: Vec<(NodeId, usize)> = counts
                .into_iter()
                .filter(|(w, _)| !exclude.contains(w) && ctx.universe.binary_search(w).is_ok())
                .collect();
            let total: usize = support.iter().map(|x| x.1).sum();
            if total == 0 {
                vec![uniform(ctx)?]
            } else {
                let mut r = ctx.rng.random_range(0..total);
                let mut pick = support[0].0;
                for (w, c) in support {
                    if r < c {
                        pick = w;
                        break;
                    }
                    r -= c;
                }
                vec![pick]
            }
        }
    };
    debug_assert!(out.iter().all(|c| !exclude.contains(c)));
    Ok(out)
}
