//! Builds the expression graph of batched temporal embeddings.
//!
//! Embeddings for many `(node, time)` queries are computed together: each
//! layer gathers the temporal neighborhoods of its queries, asks the layer
//! below for the embeddings of the queries and their neighbors (deduplicated
//! by `(node, time)`), and turns the neighborhood into one message row per
//! event. Segment offsets keep track of which messages belong to which query.

use std::collections::HashMap;

use super::config::{ScoreMode, Variant};
use super::params::{layer_name, Dims};
use super::ModelState;
use crate::graph::{NodeId, TemporalGraph};
use crate::numerics::{Array, Expr, NodeId as ExprNode, Precision};

fn linear(e: &mut Expr, x: ExprNode, rows: usize, prefix: &str) -> ExprNode {
    let w = e.param(format!("{prefix}.w"));
    let b = e.param(format!("{prefix}.b"));
    e.linear(x, rows, w, b)
}

/// `cos(Δt·w + b)` for each row of the `dt` column.
pub(crate) fn time_block(e: &mut Expr, dt: &[f64]) -> ExprNode {
    let col = e.constant(Array::matrix(dt.len(), 1, dt.to_vec()));
    let w = e.param("time.w");
    let b = e.param("time.b");
    let z = e.linear(col, dt.len(), w, b);
    e.cos(z)
}

/// Message rows `σ([h_self | h_nbr | φ(Δt) | x_uv | x_self | x_nbr]·W + b)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn message_block(
    e: &mut Expr,
    layer: usize,
    h_self: ExprNode,
    h_nbr: ExprNode,
    dt: &[f64],
    edge: Array,
    x_self: Array,
    x_nbr: Array,
) -> ExprNode {
    let rows = dt.len();
    let phi = time_block(e, dt);
    let ef = e.constant(edge);
    let xs = e.constant(x_self);
    let xn = e.constant(x_nbr);
    let input = e.concat(&[h_self, h_nbr, phi, ef, xs, xn], 1);
    let pre = linear(e, input, rows, &layer_name(layer, "msg"));
    e.sigmoid(pre)
}

/// `tanh([h_prev | agg]·W + b)` where `agg` is attention over the segment's
/// messages (query = `h_prev`) or their sum.
pub(crate) fn aggregate_block(
    e: &mut Expr,
    variant: Variant,
    layer: usize,
    h_prev: ExprNode,
    queries: usize,
    messages: ExprNode,
    segments: Vec<usize>,
) -> ExprNode {
    let agg = match variant {
        Variant::Tgat => e.attention(h_prev, messages, messages, segments),
        Variant::Tgn => e.segment_sum(messages, segments),
    };
    let input = e.concat(&[h_prev, agg], 1);
    let pre = linear(e, input, queries, &layer_name(layer, "merge"));
    e.tanh(pre)
}

/// Gated recurrent update of `h` given input rows `x`.
pub(crate) fn gru_block(e: &mut Expr, x: ExprNode, h: ExprNode, rows: usize) -> ExprNode {
    let gate = |e: &mut Expr, name: &str, hin: ExprNode| {
        let xw = linear(e, x, rows, &format!("memory.{name}"));
        let u = e.param(format!("memory.{name}.u"));
        let hu = e.matmul(hin, u);
        e.add(xw, hu)
    };
    let zp = gate(e, "z", h);
    let z = e.sigmoid(zp);
    let rp = gate(e, "r", h);
    let r = e.sigmoid(rp);
    let rh = e.mul(r, h);
    let np = gate(e, "h", rh);
    let n = e.tanh(np);
    let diff = e.sub(h, n);
    let zd = e.mul(z, diff);
    e.add(n, zd)
}

/// Row-wise pair scores of two equally shaped embedding blocks, as a
/// column. `candidates` plays the role of the first concatenated half in
/// the MLP scorer.
pub(crate) fn score_block(
    e: &mut Expr,
    mode: ScoreMode,
    candidates: ExprNode,
    sources: ExprNode,
    rows: usize,
) -> ExprNode {
    match mode {
        ScoreMode::Dot => {
            let prod = e.mul(candidates, sources);
            e.sum(prod, Some(1))
        }
        ScoreMode::MlpConcat => {
            let cat = e.concat(&[candidates, sources], 1);
            let hp = linear(e, cat, rows, "scorer.hidden");
            let h = e.tanh(hp);
            linear(e, h, rows, "scorer.out")
        }
    }
}

/// Memory rows folded from the pending buffer inside the current graph.
pub struct FoldedMemory {
    pub nodes: Vec<NodeId>,
    pub rows: ExprNode,
    index: HashMap<NodeId, usize>,
}

/// Expression builder tied to one model state and graph.
pub struct Forward<'a> {
    pub expr: Expr,
    state: &'a ModelState,
    graph: &'a TemporalGraph,
    dims: Dims,
    folded: Option<FoldedMemory>,
    horizon: usize,
}

impl<'a> Forward<'a> {
    /// Starts a graph. With memory enabled, pending events are folded into
    /// memory rows here so that the memory updater receives gradients from
    /// whatever loss is built on top.
    pub fn new(state: &'a ModelState, graph: &'a TemporalGraph, precision: Precision) -> Self {
        let mut f = Self { expr: Expr::new(precision), state, graph, dims: state.dims, folded: None, horizon: usize::MAX };
        if state.config.use_memory && !state.memory.pending().is_empty() {
            f.folded = Some(f.fold_pending());
        }
        f
    }

    /// Hides interactions with ordinal `horizon` or later from every
    /// neighborhood this builder gathers.
    pub fn with_horizon(mut self, horizon: usize) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn folded(&self) -> Option<&FoldedMemory> {
        self.folded.as_ref()
    }

    fn fold_pending(&mut self) -> FoldedMemory {
        let mem = &self.state.memory;
        let d = self.dims.embed;
        let pending: Vec<(NodeId, crate::model::memory::PendingEvent)> =
            mem.pending().iter().map(|(k, v)| (*k, *v)).collect();
        let p = pending.len();
        let mut own = Vec::with_capacity(p * d);
        let mut other = Vec::with_capacity(p * d);
        let mut dt = Vec::with_capacity(p);
        let mut edge = Vec::with_capacity(p * self.dims.edge);
        for (node, ev) in &pending {
            own.extend_from_slice(mem.row(*node));
            other.extend_from_slice(mem.row(ev.other));
            dt.push((ev.time - mem.last_update(*node)).max(0.0));
            edge.extend_from_slice(self.graph.edge_features(ev.ordinal));
        }
        let e = &mut self.expr;
        let h = e.constant(Array::matrix(p, d, own));
        let o = e.constant(Array::matrix(p, d, other));
        let phi = time_block(e, &dt);
        let ef = e.constant(Array::matrix(p, self.dims.edge, edge));
        let x = e.concat(&[h, o, phi, ef], 1);
        let rows = gru_block(e, x, h, p);
        let nodes: Vec<NodeId> = pending.iter().map(|(n, _)| *n).collect();
        let index = nodes.iter().enumerate().map(|(i, n)| (*n, i)).collect();
        FoldedMemory { nodes, rows, index }
    }

    fn node_feature_rows(&self, nodes: impl Iterator<Item = NodeId>) -> Array {
        let dn = self.dims.node;
        let mut data = Vec::new();
        let mut n = 0;
        for v in nodes {
            data.extend_from_slice(self.graph.node_features(v));
            n += 1;
        }
        Array::matrix(n, dn, data)
    }

    /// `h⁰ = proj(x_u) + s_u`, with the projection omitted when the feature
    /// and embedding widths agree and the memory term omitted without memory.
    pub fn layer_zero(&mut self, nodes: &[NodeId]) -> ExprNode {
        let k = nodes.len();
        let x = self.node_feature_rows(nodes.iter().copied());
        let xn = self.expr.constant(x);
        let base = if self.dims.needs_input_projection() { linear(&mut self.expr, xn, k, "input") } else { xn };
        if !self.state.config.use_memory {
            return base;
        }
        let d = self.dims.embed;
        let mem = &self.state.memory;
        let mut stored = Vec::with_capacity(k * d);
        for &v in nodes {
            stored.extend_from_slice(mem.row(v));
        }
        let stored = self.expr.constant(Array::matrix(k, d, stored));
        let memory = match &self.folded {
            Some(f) if nodes.iter().any(|v| f.index.contains_key(v)) => {
                let index: Vec<usize> =
                    nodes.iter().enumerate().map(|(i, v)| f.index.get(v).map_or(i, |p| k + p)).collect();
                let table = self.expr.concat(&[stored, f.rows], 0);
                self.expr.gather_rows(table, index)
            }
            _ => stored,
        };
        self.expr.add(base, memory)
    }

    /// Embeddings `h^L` for every query, one row each.
    pub fn embeddings(&mut self, queries: &[(NodeId, f64)]) -> ExprNode {
        self.layer(self.state.config.layers, queries)
    }

    fn layer(&mut self, l: usize, queries: &[(NodeId, f64)]) -> ExprNode {
        if l == 0 {
            let nodes: Vec<NodeId> = queries.iter().map(|q| q.0).collect();
            return self.layer_zero(&nodes);
        }
        let limit = self.state.config.neighbor_limit;
        let mut keys: Vec<(NodeId, f64)> = Vec::new();
        let mut key_index: HashMap<(NodeId, u64), usize> = HashMap::new();
        let mut intern = |keys: &mut Vec<(NodeId, f64)>, v: NodeId, t: f64| -> usize {
            *key_index.entry((v, t.to_bits())).or_insert_with(|| {
                keys.push((v, t));
                keys.len() - 1
            })
        };
        let self_idx: Vec<usize> = queries.iter().map(|&(v, t)| intern(&mut keys, v, t)).collect();

        let mut segments = Vec::with_capacity(queries.len() + 1);
        segments.push(0);
        let mut msg_self = Vec::new();
        let mut msg_nbr = Vec::new();
        let mut dt = Vec::new();
        let mut edge = Vec::new();
        let mut self_nodes = Vec::new();
        let mut nbr_nodes = Vec::new();
        for (q, &(v, t)) in queries.iter().enumerate() {
            for &o in self.graph.neighborhood_within(v, t, self.horizon, limit) {
                let ev = self.graph.interaction(o);
                let w = ev.other(v);
                msg_self.push(self_idx[q]);
                msg_nbr.push(intern(&mut keys, w, t));
                dt.push(t - ev.time);
                edge.extend_from_slice(self.graph.edge_features(o));
                self_nodes.push(v);
                nbr_nodes.push(w);
            }
            segments.push(dt.len());
        }

        let prev = self.layer(l - 1, &keys);
        let m = dt.len();
        let edge = Array::matrix(m, self.dims.edge, edge);
        let xs = self.node_feature_rows(self_nodes.into_iter());
        let xn = self.node_feature_rows(nbr_nodes.into_iter());
        let e = &mut self.expr;
        let hs = e.gather_rows(prev, msg_self);
        let hn = e.gather_rows(prev, msg_nbr);
        let messages = message_block(e, l, hs, hn, &dt, edge, xs, xn);
        let hq = e.gather_rows(prev, self_idx);
        aggregate_block(e, self.state.config.variant, l, hq, queries.len(), messages, segments)
    }

    /// Row-wise scores of `candidates` against `sources`.
    pub fn scores(&mut self, candidates: ExprNode, sources: ExprNode, rows: usize) -> ExprNode {
        score_block(&mut self.expr, self.state.config.score_mode, candidates, sources, rows)
    }
}
