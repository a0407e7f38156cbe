use std::cmp::Ordering;

use crate::graph::{NodeId, TemporalGraph};
use crate::model::{ModelError, ModelState};
use crate::numerics::Array;
use crate::training::{pair_score, PairScorer};

use super::SamplingError;

/// Embeddings of every registered node, frozen at one point of a pass.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSnapshot {
    pub matrix: Array,
    pub at_ordinal: usize,
    pub at_time: f64,
}

impl EmbeddingSnapshot {
    pub fn row(&self, v: NodeId) -> &[f64] {
        self.matrix.row_slice(v as usize)
    }

    pub fn node_count(&self) -> usize {
        self.matrix.rows()
    }
}

/// Embeds every node at time `t`, seeing only interactions before
/// `ordinal`.
pub fn refresh_snapshot(
    model: &ModelState,
    graph: &TemporalGraph,
    t: f64,
    ordinal: usize,
) -> Result<EmbeddingSnapshot, ModelError> {
    let queries: Vec<(NodeId, f64)> = (0..graph.node_count() as NodeId).map(|v| (v, t)).collect();
    let matrix = model.embed_within(graph, &queries, ordinal)?;
    Ok(EmbeddingSnapshot { matrix, at_ordinal: ordinal, at_time: t })
}

/// Descending score, then ascending id. Signed zeros compare equal.
fn rank_order(a: &(f64, NodeId), b: &(f64, NodeId)) -> Ordering {
    b.0.partial_cmp(&a.0).unwrap_or_else(|| b.0.total_cmp(&a.0)).then(a.1.cmp(&b.1))
}

/// The `k` members of `universe` most similar to `u`, skipping `exclude`,
/// best first with ties broken by ascending id.
pub fn topk_within(
    snapshot: &EmbeddingSnapshot,
    u: NodeId,
    k: usize,
    universe: impl IntoIterator<Item = NodeId>,
    exclude: &[NodeId],
    scorer: PairScorer<'_>,
) -> Result<Vec<NodeId>, SamplingError> {
    assert!(k >= 1, "K must be at least 1");
    let src = snapshot.row(u);
    let mut scored: Vec<(f64, NodeId)> = universe
        .into_iter()
        .filter(|c| !exclude.contains(c))
        .map(|c| (pair_score(snapshot.row(c), src, scorer), c))
        .collect();
    if scored.is_empty() {
        return Err(SamplingError::NoCandidates);
    }
    if scored.len() > k {
        scored.select_nth_unstable_by(k - 1, rank_order);
        scored.truncate(k);
    }
    scored.sort_unstable_by(rank_order);
    Ok(scored.into_iter().map(|(_, c)| c).collect())
}

/// Exact top-`k` over all nodes of the snapshot.
pub fn topk_candidates(
    snapshot: &EmbeddingSnapshot,
    u: NodeId,
    k: usize,
    exclude: &[NodeId],
    scorer: PairScorer<'_>,
) -> Result<Vec<NodeId>, SamplingError> {
    topk_within(snapshot, u, k, 0..snapshot.node_count() as NodeId, exclude, scorer)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn snap(rows: &[[f64; 2]]) -> EmbeddingSnapshot {
        EmbeddingSnapshot { matrix: Array::from_rows(rows, 2), at_ordinal: 0, at_time: 0.0 }
    }

    #[test]
    fn dot_example() {
        // u, a, b, c
        let s = snap(&[[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]]);
        assert_eq!(topk_candidates(&s, 0, 2, &[0], PairScorer::Dot).unwrap(), vec![1, 2]);
        assert_eq!(topk_candidates(&s, 0, 10, &[0], PairScorer::Dot).unwrap(), vec![1, 2, 3]);
        assert_eq!(topk_candidates(&s, 0, 2, &[0, 1], PairScorer::Dot).unwrap(), vec![2, 3]);
    }

    #[test]
    fn ties_by_id() {
        let s = snap(&[[1.0, 0.0], [0.0, 1.0], [0.0, 1.0], [0.0, 1.0]]);
        assert_eq!(topk_candidates(&s, 0, 2, &[0], PairScorer::Dot).unwrap(), vec![1, 2]);
    }

    #[test]
    fn nothing_left() {
        let s = snap(&[[1.0, 0.0], [0.0, 1.0]]);
        assert!(matches!(topk_candidates(&s, 0, 1, &[0, 1], PairScorer::Dot), Err(SamplingError::NoCandidates)));
    }
}
