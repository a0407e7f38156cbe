//! Heuristic negative distributions: a softmax over cosine similarities of
//! embeddings learned on the time-collapsed training graph, and historical
//! interaction frequencies.

use std::collections::{BTreeMap, HashMap};
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{NodeId, TemporalGraph};
use crate::model::{dense, glorot, ModelError, ParamStore};
use crate::numerics::{evaluate, gradient, Array, Expr, NodeId as ExprNode, Precision};
use crate::training::{Optimizer, OptimizerKind};

use super::SamplingError;

/// Hyperparameters of the static-graph embedding model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StaticConfig {
    pub dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Most frequent static neighbors kept per node for attention.
    pub neighbor_cap: usize,
    pub seed: u64,
}

impl Default for StaticConfig {
    fn default() -> Self {
        Self { dim: 64, epochs: 50, learning_rate: 0.01, neighbor_cap: 20, seed: 0 }
    }
}

/// Per-source softmax of cosine similarities over the nodes of the static
/// graph. Distributions are never materialized for sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticDistribution {
    unit: Array,
    members: Vec<NodeId>,
    is_member: Vec<bool>,
    pub final_loss: f64,
}

impl StaticDistribution {
    /// Uses the given rows (one per registered node) as embeddings of
    /// `members`. Zero rows have cosine 0 to everything.
    pub fn from_embeddings(embeddings: &Array, members: Vec<NodeId>) -> Self {
        let mut unit = embeddings.clone();
        for r in 0..unit.rows() {
            let row = unit.row_slice_mut(r);
            let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 0.0 {
                row.iter_mut().for_each(|x| *x /= n);
            }
        }
        let mut is_member = vec![false; unit.rows()];
        for &m in &members {
            is_member[m as usize] = true;
        }
        Self { unit, members, is_member, final_loss: f64::NAN }
    }

    pub fn members(&self) -> &[NodeId] {
        &self.members
    }

    pub fn contains(&self, v: NodeId) -> bool {
        self.is_member.get(v as usize).copied().unwrap_or(false)
    }

    pub fn cosine(&self, a: NodeId, b: NodeId) -> f64 {
        crate::numerics::dot(self.unit.row_slice(a as usize), self.unit.row_slice(b as usize))
    }

    /// Explicit distribution for source `u` over the members, uniform when
    /// `u` has no static edges.
    pub fn probabilities(&self, u: NodeId) -> Vec<(NodeId, f64)> {
        let logits: Vec<f64> =
            self.members.iter().map(|&w| if self.contains(u) { self.cosine(u, w) } else { 0.0 }).collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        self.members.iter().zip(exps).map(|(&w, e)| (w, e / z)).collect()
    }

    /// Draws from the distribution of `u` conditioned on avoiding `exclude`.
    /// Proposals are uniform over members and accepted with probability
    /// `exp(cos − 1)`, which is exact because cosines never exceed 1.
    pub fn sample<R: Rng + ?Sized>(&self, u: NodeId, exclude: &[NodeId], rng: &mut R) -> Option<NodeId> {
        let mut blocked: Vec<NodeId> = exclude.iter().copied().filter(|&x| self.contains(x)).collect();
        blocked.sort_unstable();
        blocked.dedup();
        if blocked.len() >= self.members.len() {
            return None;
        }
        let weighted = self.contains(u);
        loop {
            let w = self.members[rng.random_range(0..self.members.len())];
            if blocked.contains(&w) {
                continue;
            }
            if !weighted || rng.random::<f64>() < (self.cosine(u, w) - 1.0).exp() {
                return Some(w);
            }
        }
    }
}

/// Distinct undirected neighbors per node of the training interactions,
/// most frequent first (ties by id), capped.
fn static_neighbors(graph: &TemporalGraph, train: Range<usize>, cap: usize) -> BTreeMap<NodeId, Vec<NodeId>> {
    let mut counts: BTreeMap<NodeId, HashMap<NodeId, usize>> = BTreeMap::new();
    for e in &graph.interactions()[train] {
        *counts.entry(e.source).or_default().entry(e.target).or_default() += 1;
        *counts.entry(e.target).or_default().entry(e.source).or_default() += 1;
    }
    counts
        .into_iter()
        .map(|(v, c)| {
            let mut nbrs: Vec<(usize, NodeId)> = c.into_iter().map(|(w, n)| (n, w)).collect();
            nbrs.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
            (v, nbrs.into_iter().take(cap).map(|(_, w)| w).collect())
        })
        .collect()
}

struct StaticGraph {
    members: Vec<NodeId>,
    /// Member positions of each member's neighbors (self first), flattened.
    keys: Vec<usize>,
    segments: Vec<usize>,
    features: Array,
    edges: Vec<(usize, usize)>,
}

fn attention_layer(e: &mut Expr, h: ExprNode, g: &StaticGraph, l: usize) -> ExprNode {
    let m = g.members.len();
    let wq = e.param(format!("static.l{l}.q"));
    let wk = e.param(format!("static.l{l}.k"));
    let wv = e.param(format!("static.l{l}.v"));
    let q = e.matmul(h, wq);
    let k = e.matmul(h, wk);
    let v = e.matmul(h, wv);
    let keys = e.gather_rows(k, g.keys.clone());
    let vals = e.gather_rows(v, g.keys.clone());
    let agg = e.attention(q, keys, vals, g.segments.clone());
    let cat = e.concat(&[h, agg], 1);
    let w = e.param(format!("static.l{l}.out.w"));
    let b = e.param(format!("static.l{l}.out.b"));
    let z = e.linear(cat, m, w, b);
    e.tanh(z)
}

fn static_embeddings(e: &mut Expr, g: &StaticGraph, use_features: bool) -> ExprNode {
    let mut h = e.param("static.embed");
    if use_features {
        let x = e.constant(g.features.clone());
        let w = e.param("static.input.w");
        let xw = e.matmul(x, w);
        h = e.add(h, xw);
    }
    let h1 = attention_layer(e, h, g, 1);
    attention_layer(e, h1, g, 2)
}

/// The time-collapsed training graph and freshly initialized parameters.
fn init_static(
    graph: &TemporalGraph,
    train: Range<usize>,
    cfg: &StaticConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(StaticGraph, ParamStore, bool), SamplingError> {
    if train.is_empty() {
        return Err(SamplingError::Config("static distribution needs a nonempty training range".into()));
    }
    let nbrs = static_neighbors(graph, train.clone(), cfg.neighbor_cap);
    let members: Vec<NodeId> = nbrs.keys().copied().collect();
    let pos: HashMap<NodeId, usize> = members.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let mut keys = Vec::new();
    let mut segments = vec![0];
    for v in &members {
        keys.push(pos[v]);
        keys.extend(nbrs[v].iter().map(|w| pos[w]));
        segments.push(keys.len());
    }
    let mut edges: Vec<(usize, usize)> =
        graph.interactions()[train].iter().map(|e| (pos[&e.source], pos[&e.target])).collect();
    edges.sort_unstable();
    edges.dedup();
    let dn = graph.node_dim();
    let mut feats = Vec::with_capacity(members.len() * dn);
    for &v in &members {
        feats.extend_from_slice(graph.node_features(v));
    }
    let use_features = dn > 0 && feats.iter().any(|x| *x != 0.0);
    let g = StaticGraph { features: Array::matrix(members.len(), dn, feats), members, keys, segments, edges };

    let d = cfg.dim;
    let m = g.members.len();
    let mut params = ParamStore::new();
    params.insert("static.embed".into(), glorot(rng, m, d));
    if use_features {
        params.insert("static.input.w".into(), glorot(rng, dn, d));
    }
    for l in 1..=2 {
        for part in ["q", "k", "v"] {
            params.insert(format!("static.l{l}.{part}"), glorot(rng, d, d));
        }
        dense(&mut params, &format!("static.l{l}.out"), 2 * d, d, rng);
    }
    Ok((g, params, use_features))
}

/// One uniform negative per static edge, never an endpoint.
fn static_negatives(g: &StaticGraph, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let m = g.members.len();
    g.edges
        .iter()
        .map(|&(u, v)| {
            if m <= 2 {
                return v;
            }
            loop {
                let w = rng.random_range(0..m);
                if w != u && w != v {
                    return w;
                }
            }
        })
        .collect()
}

/// The static model's link loss at initialization with one draw of
/// negatives, for inspection and gradient checks.
pub fn static_objective(
    graph: &TemporalGraph,
    train: Range<usize>,
    cfg: &StaticConfig,
    precision: Precision,
) -> Result<(Expr, ExprNode, ParamStore), SamplingError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (g, params, use_features) = init_static(graph, train, cfg, &mut rng)?;
    let mut e = Expr::new(precision);
    let h = static_embeddings(&mut e, &g, use_features);
    let (us, vs): (Vec<usize>, Vec<usize>) = g.edges.iter().copied().unzip();
    let ws = static_negatives(&g, &mut rng);
    let loss = link_prediction_loss(&mut e, h, us, vs, ws);
    Ok((e, loss, params))
}

/// Trains a two-layer single-head attention network with learned per-node
/// input embeddings on the time-collapsed training graph, using a
/// link-prediction loss with one uniform negative per static edge.
pub fn build_static_distribution(
    graph: &TemporalGraph,
    train: Range<usize>,
    cfg: &StaticConfig,
) -> Result<StaticDistribution, SamplingError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (g, mut params, use_features) = init_static(graph, train, cfg, &mut rng)?;
    let d = cfg.dim;
    let names: Vec<String> = params.keys().cloned().collect();
    let mut opt = Optimizer::new(OptimizerKind::Adam, cfg.learning_rate);
    let mut final_loss = f64::NAN;
    for _ in 0..cfg.epochs {
        let mut e = Expr::new(Precision::Fast);
        let h = static_embeddings(&mut e, &g, use_features);
        let (us, vs): (Vec<usize>, Vec<usize>) = g.edges.iter().copied().unzip();
        let ws = static_negatives(&g, &mut rng);
        let loss = link_prediction_loss(&mut e, h, us, vs, ws);
        let grads = gradient(&e, loss, &params, &names).map_err(ModelError::from)?;
        final_loss = evaluate(&e, loss, &params).map_err(ModelError::from)?.item();
        opt.step(&mut params, &grads).map_err(|err| SamplingError::Config(err.to_string()))?;
    }
    let mut e = Expr::new(Precision::Fast);
    let h = static_embeddings(&mut e, &g, use_features);
    let emb = evaluate(&e, h, &params).map_err(ModelError::from)?;
    let mut full = Array::zeros(&[graph.node_count(), d]);
    for (i, &v) in g.members.iter().enumerate() {
        full.row_slice_mut(v as usize).copy_from_slice(emb.row_slice(i));
    }
    let mut dist = StaticDistribution::from_embeddings(&full, g.members);
    dist.final_loss = final_loss;
    Ok(dist)
}

fn link_prediction_loss(e: &mut Expr, h: ExprNode, us: Vec<usize>, vs: Vec<usize>, ws: Vec<usize>) -> ExprNode {
    let src = e.gather_rows(h, us);
    let pos = e.gather_rows(h, vs);
    let neg = e.gather_rows(h, ws);
    let sp = e.mul(src, pos);
    let sp = e.sum(sp, Some(1));
    let sn = e.mul(src, neg);
    let sn = e.sum(sn, Some(1));
    let sn = e.neg(sn);
    let lp = e.log_sigmoid(sp);
    let ln = e.log_sigmoid(sn);
    let both = e.add(lp, ln);
    let mean = e.mean(both);
    e.neg(mean)
}

/// A finite categorical distribution over node ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Categorical {
    pub support: Vec<NodeId>,
    pub probs: Vec<f64>,
}

impl Categorical {
    pub fn uniform(nodes: &[NodeId]) -> Self {
        let p = 1.0 / nodes.len() as f64;
        Self { support: nodes.to_vec(), probs: vec![p; nodes.len()] }
    }

    pub fn prob(&self, v: NodeId) -> f64 {
        self.support.iter().position(|&s| s == v).map_or(0.0, |i| self.probs[i])
    }

    /// Draws conditioned on avoiding `exclude`; `None` when no mass remains.
    pub fn sample_excluding<R: Rng + ?Sized>(&self, exclude: &[NodeId], rng: &mut R) -> Option<NodeId> {
        let mass: f64 =
            self.support.iter().zip(&self.probs).filter(|(s, _)| !exclude.contains(s)).map(|(_, p)| p).sum();
        if mass <= 0.0 {
            return None;
        }
        let mut r = rng.random::<f64>() * mass;
        let mut last = None;
        for (&s, &p) in self.support.iter().zip(&self.probs) {
            if exclude.contains(&s) || p == 0.0 {
                continue;
            }
            last = Some(s);
            if r < p {
                return Some(s);
            }
            r -= p;
        }
        last
    }
}

/// How often `u` met each partner before time `before`, counting only
/// interactions with ordinal below `horizon`.
pub fn interaction_counts(graph: &TemporalGraph, u: NodeId, before: f64, horizon: usize) -> BTreeMap<NodeId, usize> {
    let mut counts = BTreeMap::new();
    for &o in graph.neighborhood_within(u, before, horizon, usize::MAX) {
        let e = graph.interaction(o);
        *counts.entry(e.other(u)).or_default() += 1;
    }
    counts
}

/// Frequencies of `u`'s partners before `before`, or uniform over
/// `universe` when `u` has no history.
pub fn build_ifq_distribution(graph: &TemporalGraph, u: NodeId, before: f64, universe: &[NodeId]) -> Categorical {
    let counts = interaction_counts(graph, u, before, usize::MAX);
    if counts.is_empty() {
        return Categorical::uniform(universe);
    }
    let total: usize = counts.values().sum();
    let (support, probs) = counts.into_iter().map(|(v, c)| (v, c as f64 / total as f64)).unzip();
    Categorical { support, probs }
}
