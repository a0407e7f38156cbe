use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::graph::{generate_synthetic, SyntheticConfig};
use crate::model::ModelConfig;

fn oracle_rank(target: NodeId, scores: &[(NodeId, f64)]) -> usize {
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    1 + sorted.iter().position(|c| c.0 == target).unwrap()
}

#[test]
fn rank_examples() {
    assert_eq!(rank_of(0, &[(0, 3.0), (1, 1.0), (2, 2.0)]).unwrap(), 1);
    let flat: Vec<(NodeId, f64)> = (0..6).map(|c| (c, 0.25)).collect();
    assert_eq!(rank_of(0, &flat).unwrap(), 1);
    assert_eq!(rank_of(5, &flat).unwrap(), 6);
    assert_eq!(rank_of(7, &[(7, 0.5), (1, 0.9), (2, 0.1)]).unwrap(), 2);
    assert!(matches!(rank_of(1, &[]), Err(EvalError::EmptyCandidates)));
    assert!(matches!(rank_of(1, &[(2, 0.0)]), Err(EvalError::TargetNotCandidate { target: 1 })));
}

#[test]
fn metric_arithmetic() {
    let m = metrics_from_ranks(&[1, 2, 4]);
    assert!((m.mrr - 0.583333333333333).abs() < 1e-12);
    assert!((m.recall(1) - 1.0 / 3.0).abs() < 1e-15);
    assert_eq!(m.recall(5), 1.0);
    let p = metrics_from_ranks(&[1; 9]);
    assert_eq!((p.mrr, p.recall(1), p.recall(5), p.recall(10)), (1.0, 1.0, 1.0, 1.0));
    assert!(m.to_key_values().starts_with("mrr=0.58"));
    assert!(m.to_delimited().starts_with("MRR,Recall@1,Recall@5,Recall@10\n"));
}

#[test]
fn random_scorer_mrr_is_harmonic_over_c() {
    let c = 100;
    let trials = 2000;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let ranks: Vec<usize> = (0..trials)
        .map(|_| {
            let scores: Vec<(NodeId, f64)> = (0..c as NodeId).map(|v| (v, rng.random::<f64>())).collect();
            rank_of(rng.random_range(0..c as NodeId), &scores).unwrap()
        })
        .collect();
    let h: f64 = (1..=c).map(|k| 1.0 / k as f64).sum();
    let mean = h / c as f64;
    let second: f64 = (1..=c).map(|k| 1.0 / (k * k) as f64).sum::<f64>() / c as f64;
    let sigma = ((second - mean * mean) / trials as f64).sqrt();
    let got = metrics_from_ranks(&ranks).mrr;
    assert!((got - mean).abs() < 3.0 * sigma, "{got} vs {mean} ± {sigma}");
}

proptest! {
    #[test]
    fn rank_matches_sort_oracle(levels in prop::collection::vec(0u8..6, 1..60), pick in 0usize..60) {
        let scores: Vec<(NodeId, f64)> = levels.iter().enumerate().map(|(i, &l)| (i as NodeId * 3, l as f64 / 4.0)).collect();
        let target = scores[pick % scores.len()].0;
        prop_assert_eq!(rank_of(target, &scores).unwrap(), oracle_rank(target, &scores));
    }

    #[test]
    fn metric_invariants(ranks in prop::collection::vec(1usize..50, 1..80)) {
        let m = metrics_from_ranks(&ranks);
        prop_assert!(m.mrr > 0.0 && m.mrr <= 1.0);
        prop_assert!(m.recall(1) <= m.recall(5) && m.recall(5) <= m.recall(10));
        prop_assert!(m.recall(1) <= m.mrr);
        prop_assert!(m.recall_at.values().all(|r| (0.0..=1.0).contains(r)));
    }
}

fn small() -> (TemporalGraph, ModelState) {
    let g = generate_synthetic(&SyntheticConfig { n_sources: 8, n_targets: 5, n_events: 240, ..Default::default() });
    let cfg = ModelConfig { embed_dim: 8, time_dim: 4, ..ModelConfig::tgn() };
    let m = ModelState::new(cfg, &g, 3).unwrap();
    (g, m)
}

#[test]
fn candidate_policies() {
    let (g, _) = small();
    let all = candidate_set(&g, 2, CandidatePolicy::AllNodes);
    assert_eq!(all.len(), g.node_count() - 1);
    assert!(!all.contains(&2));
    let opp = candidate_set(&g, 2, CandidatePolicy::OppositePartition);
    assert_eq!(opp, g.nodes_in(Partition::Target));
}

#[test]
fn evaluation_is_repeatable_and_leaves_parameters() {
    let (g, mut m) = small();
    let before = m.clone();
    let (a, ra) = evaluate(&mut m, &g, 200..240, CandidatePolicy::AllNodes, 16).unwrap();
    assert_eq!(m.params, before.params);
    assert_ne!(m.memory, before.memory);
    let mut again = before.clone();
    let (b, rb) = evaluate(&mut again, &g, 200..240, CandidatePolicy::AllNodes, 16).unwrap();
    assert_eq!(a, b);
    assert_eq!(ra, rb);
    assert_eq!(a.n_evaluated, 40);
    assert!(ra.iter().all(|r| r.rank >= 1 && r.rank <= r.candidates && r.candidates == g.node_count() - 1));
    assert!(matches!(evaluate(&mut again, &g, 5..5, CandidatePolicy::AllNodes, 4), Err(EvalError::EmptyRange)));
}

#[test]
fn single_event_batches_agree_with_rank_target() {
    let g = generate_synthetic(&SyntheticConfig { n_sources: 6, n_targets: 4, n_events: 120, ..Default::default() });
    let cfg = ModelConfig { embed_dim: 6, time_dim: 3, ..ModelConfig::tgat() };
    let mut m = ModelState::new(cfg, &g, 9).unwrap();
    let fixed = m.clone();
    let (_, results) = evaluate(&mut m, &g, 100..120, CandidatePolicy::OppositePartition, 1).unwrap();
    for r in results {
        let e = g.interaction(r.ordinal);
        let cands = candidate_set(&g, e.source, CandidatePolicy::OppositePartition);
        assert_eq!(rank_target(&fixed, &g, e.source, e.target, e.time, &cands).unwrap(), r.rank);
    }
}

#[test]
fn opposite_partition_never_ranks_worse() {
    let (g, m) = small();
    let (all, _) = evaluate(&mut m.clone(), &g, 150..240, CandidatePolicy::AllNodes, 30).unwrap();
    let (opp, _) = evaluate(&mut m.clone(), &g, 150..240, CandidatePolicy::OppositePartition, 30).unwrap();
    assert!(opp.mrr >= all.mrr);
}

#[test]
fn snapshot_export_format() {
    let (g, m) = small();
    let dir = tempfile::tempdir().unwrap();
    let p1 = dir.path().join("a.csv");
    let p2 = dir.path().join("b.csv");
    export_snapshot(&m, &g, 100.0, &p1).unwrap();
    export_snapshot(&m, &g, 100.0, &p2).unwrap();
    let text = std::fs::read_to_string(&p1).unwrap();
    assert_eq!(text, std::fs::read_to_string(&p2).unwrap());
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), g.node_count() + 1);
    assert!(lines.iter().all(|l| l.split(',').count() == 8 + 2));
    assert!(lines[0].starts_with("t=100,d=8"));
    let parsed = read_snapshot(&p1).unwrap();
    assert_eq!(parsed.t, 100.0);
    let h = m.embed_many(&g, &(0..g.node_count() as NodeId).map(|v| (v, 100.0)).collect::<Vec<_>>()).unwrap();
    for (v, part, row) in &parsed.rows {
        assert_eq!(part, g.partition(*v).label());
        for (a, b) in row.iter().zip(h.row_slice(*v as usize)) {
            assert!((a - b).abs() <= 1e-6);
        }
    }
    assert!(export_snapshot(&m, &g, 1.0, &dir.path().join("missing/x.csv")).is_err());
}
