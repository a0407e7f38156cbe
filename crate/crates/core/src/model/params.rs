use std::collections::BTreeMap;

use rand::Rng;

use super::config::{ModelConfig, ScoreMode};
use crate::numerics::Array;

/// Trainable parameters by name.
pub type ParamStore = BTreeMap<String, Array>;

/// Dimensions the parameter shapes depend on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub embed: usize,
    pub time: usize,
    pub node: usize,
    pub edge: usize,
}

impl Dims {
    pub fn new(cfg: &ModelConfig, node_dim: usize, edge_dim: usize) -> Self {
        Self { embed: cfg.embed_dim, time: cfg.time_dim, node: node_dim, edge: edge_dim }
    }

    /// Width of the message input `[h_self | h_nbr | φ | x_uv | x_self | x_nbr]`.
    pub fn message_input(&self) -> usize {
        2 * self.embed + self.time + self.edge + 2 * self.node
    }

    /// Width of the memory updater input `[s_self | s_other | φ | x_uv]`.
    pub fn memory_input(&self) -> usize {
        2 * self.embed + self.time + self.edge
    }

    pub fn needs_input_projection(&self) -> bool {
        self.node != self.embed
    }
}

pub(crate) fn layer_name(l: usize, part: &str) -> String {
    format!("layer{l}.{part}")
}

pub(crate) fn glorot<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Array {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array::matrix(fan_in, fan_out, (0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)).collect())
}

pub(crate) fn dense<R: Rng + ?Sized>(p: &mut ParamStore, prefix: &str, fan_in: usize, fan_out: usize, rng: &mut R) {
    p.insert(format!("{prefix}.w"), glorot(rng, fan_in, fan_out));
    p.insert(format!("{prefix}.b"), Array::zeros(&[1, fan_out]));
}

/// Fresh parameters. Weight matrices are Glorot-uniform, biases zero, and
/// time-encoding frequencies follow `10^-(9·i/(T-1))`.
pub fn init_params<R: Rng + ?Sized>(cfg: &ModelConfig, dims: Dims, rng: &mut R) -> ParamStore {
    let d = dims.embed;
    let mut p = ParamStore::new();

    let t = dims.time;
    let freqs: Vec<f64> = (0..t)
        .map(|i| {
            let frac = if t > 1 { i as f64 / (t - 1) as f64 } else { 0.0 };
            10f64.powf(-9.0 * frac)
        })
        .collect();
    p.insert("time.w".into(), Array::row(freqs));
    p.insert("time.b".into(), Array::zeros(&[1, t]));

    if dims.needs_input_projection() {
        dense(&mut p, "input", dims.node, d, rng);
    }
    for l in 1..=cfg.layers {
        dense(&mut p, &layer_name(l, "msg"), dims.message_input(), d, rng);
        dense(&mut p, &layer_name(l, "merge"), 2 * d, d, rng);
    }
    if cfg.use_memory {
        for gate in ["z", "r", "h"] {
            dense(&mut p, &format!("memory.{gate}"), dims.memory_input(), d, rng);
            p.insert(format!("memory.{gate}.u"), glorot(rng, d, d));
        }
    }
    if cfg.score_mode == ScoreMode::MlpConcat {
        dense(&mut p, "scorer.hidden", 2 * d, d, rng);
        dense(&mut p, "scorer.out", d, 1, rng);
    }
    p
}

/// Parameter names in a deterministic order.
pub fn param_names(p: &ParamStore) -> Vec<String> {
    p.keys().cloned().collect()
}
