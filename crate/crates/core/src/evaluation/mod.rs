//! Chronological ranking evaluation and embedding export.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::graph::{NodeId, Partition, TemporalGraph};
use crate::model::{ModelError, ModelState, ScoreMode};
use crate::training::{pair_score, PairScorer};

/// Cutoffs reported as Recall@k.
pub const RECALL_KS: [usize; 3] = [1, 5, 10];

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("no candidates to rank")]
    EmptyCandidates,
    #[error("target {target} is not among the candidates")]
    TargetNotCandidate { target: NodeId },
    #[error("empty evaluation range")]
    EmptyRange,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

/// Which nodes a test interaction's target is ranked against. The source
/// itself is never a candidate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CandidatePolicy {
    #[default]
    AllNodes,
    /// Nodes in the partition opposite to the source; all nodes when the
    /// source has no partition.
    OppositePartition,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankingMetrics {
    pub mrr: f64,
    pub recall_at: BTreeMap<usize, f64>,
    pub n_evaluated: usize,
}

impl RankingMetrics {
    pub fn recall(&self, k: usize) -> f64 {
        self.recall_at[&k]
    }

    /// Column names and values in table order.
    pub fn columns(&self) -> Vec<(String, f64)> {
        let mut out = vec![("MRR".to_string(), self.mrr)];
        out.extend(self.recall_at.iter().map(|(k, v)| (format!("Recall@{k}"), *v)));
        out
    }

    /// `key=value` lines.
    pub fn to_key_values(&self) -> String {
        let mut s = format!("mrr={}\n", self.mrr);
        for (k, v) in &self.recall_at {
            s.push_str(&format!("recall@{k}={v}\n"));
        }
        s.push_str(&format!("n_evaluated={}\n", self.n_evaluated));
        s
    }

    /// Header and one row of comma-separated values.
    pub fn to_delimited(&self) -> String {
        let cols = self.columns();
        let head: Vec<&str> = cols.iter().map(|c| c.0.as_str()).collect();
        let vals: Vec<String> = cols.iter().map(|c| c.1.to_string()).collect();
        format!("{}\n{}\n", head.join(","), vals.join(","))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankResult {
    pub ordinal: usize,
    pub rank: usize,
    pub candidates: usize,
}

/// `1 + #{better} + #{equal with smaller id}`.
pub fn rank_of(target: NodeId, scores: &[(NodeId, f64)]) -> Result<usize, EvalError> {
    if scores.is_empty() {
        return Err(EvalError::EmptyCandidates);
    }
    let s_v = scores.iter().find(|c| c.0 == target).ok_or(EvalError::TargetNotCandidate { target })?.1;
    let ahead = scores.iter().filter(|&&(c, s)| s > s_v || (s == s_v && c < target)).count();
    Ok(1 + ahead)
}

pub fn metrics_from_ranks(ranks: &[usize]) -> RankingMetrics {
    let n = ranks.len();
    let nf = n.max(1) as f64;
    let mrr = ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / nf;
    let recall_at = RECALL_KS
        .iter()
        .map(|&k| (k, ranks.iter().filter(|&&r| r <= k).count() as f64 / nf))
        .collect();
    RankingMetrics { mrr, recall_at, n_evaluated: n }
}

/// The scorer the model was trained with.
pub fn model_scorer(model: &ModelState) -> PairScorer<'_> {
    match model.config.score_mode {
        ScoreMode::Dot => PairScorer::Dot,
        ScoreMode::MlpConcat => PairScorer::Mlp(&model.params),
    }
}

/// Candidate nodes for a source under `policy`, ascending, without the
/// source.
pub fn candidate_set(graph: &TemporalGraph, u: NodeId, policy: CandidatePolicy) -> Vec<NodeId> {
    let part = match (policy, graph.partition(u)) {
        (CandidatePolicy::OppositePartition, Partition::Source) => Some(Partition::Target),
        (CandidatePolicy::OppositePartition, Partition::Target) => Some(Partition::Source),
        _ => None,
    };
    (0..graph.node_count() as NodeId)
        .filter(|&c| c != u && part.is_none_or(|p| graph.partition(c) == p))
        .collect()
}

/// Rank of `v` among `candidates` for source `u` at time `t`, embedding
/// with every interaction before `t`.
pub fn rank_target(
    model: &ModelState,
    graph: &TemporalGraph,
    u: NodeId,
    v: NodeId,
    t: f64,
    candidates: &[NodeId],
) -> Result<usize, EvalError> {
    if candidates.is_empty() {
        return Err(EvalError::EmptyCandidates);
    }
    assert!(!candidates.contains(&u), "the source is not a candidate");
    let mut queries = vec![(u, t)];
    queries.extend(candidates.iter().map(|&c| (c, t)));
    let h = model.embed_many(graph, &queries)?;
    let scorer = model_scorer(model);
    let scores: Vec<(NodeId, f64)> = candidates
        .iter()
        .enumerate()
        .map(|(i, &c)| (c, pair_score(h.row_slice(i + 1), h.row_slice(0), scorer)))
        .collect();
    rank_of(v, &scores)
}

/// Ranks every interaction of `range` in chronological batches. Each batch
/// is predicted from the state at its start; its events are then revealed
/// to memory. Parameters are never touched.
pub fn evaluate(
    model: &mut ModelState,
    graph: &TemporalGraph,
    range: Range<usize>,
    policy: CandidatePolicy,
    batch_size: usize,
) -> Result<(RankingMetrics, Vec<RankResult>), EvalError> {
    if range.is_empty() {
        return Err(EvalError::EmptyRange);
    }
    assert!(batch_size >= 1, "batch size must be positive");
    let mut per_source: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
    let mut results = Vec::with_capacity(range.len());
    for batch in graph.interactions()[range].chunks(batch_size) {
        let first = batch[0].ordinal;
        let mut queries = Vec::new();
        let mut spans = Vec::with_capacity(batch.len());
        for e in batch {
            let cands = per_source.entry(e.source).or_insert_with(|| candidate_set(graph, e.source, policy));
            if !cands.contains(&e.target) {
                return Err(EvalError::TargetNotCandidate { target: e.target });
            }
            let start = queries.len();
            queries.push((e.source, e.time));
            queries.extend(cands.iter().map(|&c| (c, e.time)));
            spans.push(start);
        }
        let h = model.embed_within(graph, &queries, first)?;
        let scorer = model_scorer(model);
        for (e, &start) in batch.iter().zip(&spans) {
            let cands = &per_source[&e.source];
            let src = h.row_slice(start);
            let scores: Vec<(NodeId, f64)> = cands
                .iter()
                .enumerate()
                .map(|(i, &c)| (c, pair_score(h.row_slice(start + 1 + i), src, scorer)))
                .collect();
            let rank = rank_of(e.target, &scores)?;
            results.push(RankResult { ordinal: e.ordinal, rank, candidates: cands.len() });
        }
        if model.config.use_memory {
            model.flush_memory(graph)?;
            model.memory.stage(batch).map_err(ModelError::from)?;
        }
    }
    let ranks: Vec<usize> = results.iter().map(|r| r.rank).collect();
    Ok((metrics_from_ranks(&ranks), results))
}

/// Writes every node's embedding at time `t`. The first header cells carry
/// `t` and `d` in place of the node-id and partition column names.
pub fn export_snapshot(model: &ModelState, graph: &TemporalGraph, t: f64, path: &Path) -> Result<(), EvalError> {
    let n = graph.node_count();
    let queries: Vec<(NodeId, f64)> = (0..n as NodeId).map(|v| (v, t)).collect();
    let h = model.embed_many(graph, &queries)?;
    let d = h.cols();
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "t={t},d={d}")?;
    for j in 0..d {
        write!(w, ",h{j}")?;
    }
    writeln!(w)?;
    for v in 0..n {
        write!(w, "{v},{}", graph.partition(v as NodeId).label())?;
        for x in h.row_slice(v) {
            write!(w, ",{x}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// A parsed snapshot export.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotFile {
    pub t: f64,
    pub rows: Vec<(NodeId, String, Vec<f64>)>,
}

pub fn read_snapshot(path: &Path) -> Result<SnapshotFile, EvalError> {
    let bad = |m: &str| EvalError::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, m.to_string()));
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let head = lines.next().ok_or_else(|| bad("empty snapshot"))?;
    let t = head
        .split(',')
        .next()
        .and_then(|c| c.strip_prefix("t="))
        .and_then(|x| x.parse().ok())
        .ok_or_else(|| bad("header lacks t"))?;
    let mut rows = Vec::new();
    for line in lines {
        let mut cells = line.split(',');
        let id = cells.next().and_then(|c| c.parse().ok()).ok_or_else(|| bad("bad node id"))?;
        let part = cells.next().ok_or_else(|| bad("missing partition"))?.to_string();
        let vals = cells.map(|c| c.parse().map_err(|_| bad("bad value"))).collect::<Result<Vec<f64>, _>>()?;
        rows.push((id, part, vals));
    }
    Ok(SnapshotFile { t, rows })
}

#[cfg(test)]
mod tests;
