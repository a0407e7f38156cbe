//! Time-aware node embeddings by temporal message passing, with optional
//! recurrent node memory.

mod checkpoint;
mod config;
mod forward;
mod memory;
mod params;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use config::{ModelConfig, ScoreMode, Variant};
pub use forward::{FoldedMemory, Forward};
pub use memory::{Memory, OutOfOrder, PendingEvent};
pub use params::{init_params, param_names, Dims, ParamStore};
pub(crate) use params::{dense, glorot};

use crate::graph::{GraphError, Interaction, NodeId, TemporalGraph};
use crate::numerics::{dot, Array, Expr, NumericsError, Precision};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    OutOfOrder(#[from] OutOfOrder),
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

/// A node embedding `h_v(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub vector: Vec<f64>,
    pub node: NodeId,
    pub at_time: f64,
}

/// Parameters, memory and configuration of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub config: ModelConfig,
    pub dims: Dims,
    pub params: ParamStore,
    pub memory: Memory,
    pub precision: Precision,
}

impl ModelState {
    /// Freshly initialized model sized for `graph`.
    pub fn new(config: ModelConfig, graph: &TemporalGraph, seed: u64) -> Result<Self, ModelError> {
        config.validate().map_err(ModelError::Config)?;
        let dims = Dims::new(&config, graph.node_dim(), graph.edge_dim());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = init_params(&config, dims, &mut rng);
        let memory = Memory::new(graph.node_count(), config.embed_dim);
        Ok(Self { config, dims, params, memory, precision: Precision::Fast })
    }

    pub fn with_precision(mut self, precision: Precision) -> Self {
        self.precision = precision;
        self
    }

    pub fn forward<'a>(&'a self, graph: &'a TemporalGraph) -> Forward<'a> {
        Forward::new(self, graph, self.precision)
    }

    /// Embeddings of many `(node, time)` queries, one row each. Pending
    /// memory events are folded in (without committing them).
    pub fn embed_many(&self, graph: &TemporalGraph, queries: &[(NodeId, f64)]) -> Result<Array, ModelError> {
        self.embed_within(graph, queries, usize::MAX)
    }

    /// [`Self::embed_many`] with neighborhoods restricted to ordinals below
    /// `horizon`. Queries are processed in chunks to bound graph size.
    pub fn embed_within(
        &self,
        graph: &TemporalGraph,
        queries: &[(NodeId, f64)],
        horizon: usize,
    ) -> Result<Array, ModelError> {
        const CHUNK: usize = 2048;
        for &(v, t) in queries {
            graph.check_node(v)?;
            if !(t >= 0.0) {
                return Err(ModelError::Config(format!("query time {t} must be nonnegative")));
            }
        }
        let d = self.dims.embed;
        let mut out = Vec::with_capacity(queries.len() * d);
        for chunk in queries.chunks(CHUNK) {
            let mut f = self.forward(graph).with_horizon(horizon);
            let h = f.embeddings(chunk);
            let tape = f.expr.forward(&self.params)?;
            out.extend_from_slice(tape.value(h).data());
        }
        Ok(Array::matrix(queries.len(), d, out))
    }

    pub fn embed(&self, graph: &TemporalGraph, node: NodeId, t: f64) -> Result<Embedding, ModelError> {
        let h = self.embed_many(graph, &[(node, t)])?;
        Ok(Embedding { vector: h.row_slice(0).to_vec(), node, at_time: t })
    }

    /// `cos(w·Δt + b)`.
    pub fn time_encode(&self, delta_t: f64) -> Vec<f64> {
        assert!(delta_t >= 0.0, "time deltas are nonnegative");
        let w = self.params["time.w"].data();
        let b = self.params["time.b"].data();
        w.iter().zip(b).map(|(w, b)| (w * delta_t + b).cos()).collect()
    }

    /// Layer-zero representation `x_u + s_u(t⁻)` of one node.
    pub fn layer_zero(&self, graph: &TemporalGraph, node: NodeId) -> Result<Vec<f64>, ModelError> {
        graph.check_node(node)?;
        let mut f = self.forward(graph);
        let h = f.layer_zero(&[node]);
        Ok(f.expr.forward(&self.params)?.value(h).data().to_vec())
    }

    /// Message of layer `layer` carried by event `e` to `self_node` at time `t`.
    #[allow(clippy::too_many_arguments)]
    pub fn compute_message(
        &self,
        graph: &TemporalGraph,
        e: &Interaction,
        self_node: NodeId,
        t: f64,
        layer: usize,
        neighbor_embedding: &[f64],
        self_embedding: &[f64],
    ) -> Result<Vec<f64>, ModelError> {
        assert!(e.time < t, "messages come from strictly earlier events");
        let d = self.dims.embed;
        let other = e.other(self_node);
        let mut x = Expr::new(self.precision);
        let hs = x.constant(Array::matrix(1, d, self_embedding.to_vec()));
        let hn = x.constant(Array::matrix(1, d, neighbor_embedding.to_vec()));
        let m = forward::message_block(
            &mut x,
            layer,
            hs,
            hn,
            &[t - e.time],
            Array::row(graph.edge_features(e.ordinal).to_vec()),
            Array::row(graph.node_features(self_node).to_vec()),
            Array::row(graph.node_features(other).to_vec()),
        );
        Ok(x.forward(&self.params)?.value(m).data().to_vec())
    }

    /// Layer-`layer` aggregation of `messages` for a node whose previous
    /// representation is `self_embedding`.
    pub fn aggregate(&self, layer: usize, messages: &[Vec<f64>], self_embedding: &[f64]) -> Result<Vec<f64>, ModelError> {
        let d = self.dims.embed;
        let mut x = Expr::new(self.precision);
        let hq = x.constant(Array::matrix(1, d, self_embedding.to_vec()));
        let m = x.constant(Array::from_rows(messages, d));
        let out = forward::aggregate_block(&mut x, self.config.variant, layer, hq, 1, m, vec![0, messages.len()]);
        Ok(x.forward(&self.params)?.value(out).data().to_vec())
    }

    /// Folds pending events into memory (no gradient) and commits them.
    pub fn flush_memory(&mut self, graph: &TemporalGraph) -> Result<(), ModelError> {
        if !self.config.use_memory || self.memory.pending().is_empty() {
            return Ok(());
        }
        let f = self.forward(graph);
        let folded = f.folded().expect("pending events present");
        let (nodes, rows) = (folded.nodes.clone(), folded.rows);
        let values = f.expr.forward(&self.params)?.value(rows).clone();
        self.memory.commit(&nodes, &values);
        Ok(())
    }

    /// Stages a batch and folds it into memory. Used when the caller has
    /// already consumed every prediction for the batch.
    pub fn memory_update(&mut self, graph: &TemporalGraph, batch: &[Interaction]) -> Result<(), ModelError> {
        if !self.config.use_memory {
            return Ok(());
        }
        self.flush_memory(graph)?;
        self.memory.stage(batch)?;
        self.flush_memory(graph)
    }

    pub fn reset_memory(&mut self) {
        self.memory.reset();
    }

    /// Link score of `candidate` against `source` outside any graph.
    pub fn score(&self, candidate: &[f64], source: &[f64]) -> f64 {
        match self.config.score_mode {
            ScoreMode::Dot => dot(candidate, source),
            ScoreMode::MlpConcat => mlp_score(&self.params, candidate, source),
        }
    }
}

/// `tanh([c | s]·W₁ + b₁)·W₂ + b₂`, evaluated directly.
pub(crate) fn mlp_score(params: &ParamStore, candidate: &[f64], source: &[f64]) -> f64 {
    let w1 = &params["scorer.hidden.w"];
    let b1 = params["scorer.hidden.b"].data();
    let w2 = params["scorer.out.w"].data();
    let b2 = params["scorer.out.b"].item();
    let hidden = w1.cols();
    let mut acc = b1.to_vec();
    for (i, x) in candidate.iter().chain(source).enumerate() {
        if *x == 0.0 {
            continue;
        }
        for (a, w) in acc.iter_mut().zip(w1.row_slice(i)) {
            *a += x * w;
        }
    }
    debug_assert_eq!(acc.len(), hidden);
    acc.iter().zip(w2).map(|(a, w)| a.tanh() * w).sum::<f64>() + b2
}

#[cfg(test)]
mod tests;
