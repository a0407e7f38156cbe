use crate::graph::{Interaction, NodeId, TemporalGraph};
use crate::model::{ModelError, ModelState};
use crate::numerics::Precision;

use super::loss::negative_term;

/// Per-candidate negative losses and gradient norms for one interaction.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceProbeReport {
    pub interaction: Interaction,
    pub candidates: Vec<NodeId>,
    pub losses: Vec<f64>,
    pub gradient_norms: Vec<f64>,
    /// Spearman correlation of losses and norms; `None` when either side
    /// has no variation.
    pub spearman: Option<f64>,
}

impl VarianceProbeReport {
    pub fn is_degenerate(&self) -> bool {
        self.spearman.is_none()
    }
}

/// For every candidate `c`, the negative term `−log σ(−s(c, u))` of the
/// link loss and the norm of its gradient over all parameters, in exact
/// precision, with the state the model holds and neighborhoods cut at the
/// interaction.
pub fn gradient_variance_probe(
    model: &ModelState,
    graph: &TemporalGraph,
    interaction: &Interaction,
    candidates: &[NodeId],
) -> Result<VarianceProbeReport, ModelError> {
    let (u, v, t) = (interaction.source, interaction.target, interaction.time);
    assert!(candidates.iter().all(|&c| c != u && c != v), "probe candidates exclude the endpoints");
    let exact = model.clone().with_precision(Precision::Exact);
    let names: Vec<String> = exact.params.keys().cloned().collect();
    let mut losses = Vec::with_capacity(candidates.len());
    let mut norms = Vec::with_capacity(candidates.len());
    for &c in candidates {
        let mut f = exact.forward(graph).with_horizon(interaction.ordinal);
        let h = f.embeddings(&[(u, t), (c, t)]);
        let hu = f.expr.slice(h, 0, 0, 1);
        let hc = f.expr.slice(h, 0, 1, 2);
        let s = f.scores(hc, hu, 1);
        let ns = f.expr.neg(s);
        let ls = f.expr.log_sigmoid(ns);
        let loss = f.expr.neg(ls);
        let tape = f.expr.forward(&exact.params)?;
        let score = tape.value(s).item();
        let grads = tape.backward(loss, &names, &exact.params)?;
        losses.push(negative_term(score));
        norms.push(grads.values().map(|g| g.norm_sq()).sum::<f64>().sqrt());
    }
    let spearman = spearman(&losses, &norms);
    Ok(VarianceProbeReport {
        interaction: *interaction,
        candidates: candidates.to_vec(),
        losses,
        gradient_norms: norms,
        spearman,
    })
}

/// Average ranks, ties sharing the mean of their positions.
fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation, `None` if either input is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len());
    if x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let mean = (x.len() as f64 + 1.0) / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mean) * (b - mean);
        sxx += (a - mean) * (a - mean);
        syy += (b - mean) * (b - mean);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}
