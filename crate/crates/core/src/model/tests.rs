use super::*;
use crate::graph::{Partition, RawEvent};
use crate::numerics::{finite_difference_check, Array, Expr, Precision};
use rand::{Rng, SeedableRng};

fn cfg(variant: Variant, layers: usize, d: usize) -> ModelConfig {
    ModelConfig {
        variant,
        layers,
        embed_dim: d,
        time_dim: 3,
        neighbor_limit: 10,
        use_memory: variant == Variant::Tgn,
        score_mode: ScoreMode::Dot,
    }
}

/// Six nodes, features of width `dim`, a handful of events at integer times.
fn toy_graph(dim: usize, seed: u64) -> TemporalGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 6;
    let feats = Array::matrix(n, dim, (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect());
    let pairs = [(0, 3), (1, 4), (0, 4), (2, 5), (1, 3), (0, 3), (2, 4), (1, 5)];
    let events = pairs
        .iter()
        .enumerate()
        .map(|(i, &(s, t))| RawEvent {
            source: s,
            target: t,
            time: (i + 1) as f64,
            label: 0,
            features: (0..2).map(|_| rng.random_range(-1.0..1.0)).collect(),
        })
        .collect();
    let parts = vec![
        Partition::Source,
        Partition::Source,
        Partition::Source,
        Partition::Target,
        Partition::Target,
        Partition::Target,
    ];
    TemporalGraph::new(feats, parts, events, 2).unwrap()
}

#[test]
fn time_encoding_at_zero_is_ones() {
    let g = toy_graph(4, 0);
    let m = ModelState::new(cfg(Variant::Tgat, 1, 4), &g, 1).unwrap();
    assert!(m.time_encode(0.0).iter().all(|v| *v == 1.0));
    assert_eq!(m.time_encode(2.5), m.time_encode(2.5));
}

#[test]
fn time_encoding_gradient_matches_finite_differences() {
    let g = toy_graph(4, 0);
    let m = ModelState::new(cfg(Variant::Tgat, 1, 4), &g, 1).unwrap();
    let mut params = m.params.clone();
    params.insert("time.w".into(), Array::row(vec![0.7, -0.3, 1.1]));
    params.insert("time.b".into(), Array::row(vec![0.1, 0.2, -0.4]));
    let mut e = Expr::new(Precision::Exact);
    let phi = forward::time_block(&mut e, &[0.5, 1.7, 3.0]);
    let sq = e.mul(phi, phi);
    let root = e.sum(sq, None);
    let err = finite_difference_check(&e, root, &params, &["time.w".into(), "time.b".into()], 1e-5).unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn layer_zero_without_memory_is_features() {
    let g = toy_graph(4, 2);
    let m = ModelState::new(cfg(Variant::Tgat, 1, 4), &g, 1).unwrap();
    let h = m.layer_zero(&g, 3).unwrap();
    assert_eq!(h, g.node_features(3));
}

#[test]
fn layer_zero_fresh_zero_node_is_zero() {
    let mut g = toy_graph(4, 2);
    let feats = Array::zeros(&[6, 4]);
    g = TemporalGraph::new(feats, g.partitions().to_vec(), g.raw_events(), 2).unwrap();
    let m = ModelState::new(cfg(Variant::Tgn, 1, 4), &g, 1).unwrap();
    assert!(m.layer_zero(&g, 5).unwrap().iter().all(|v| *v == 0.0));
}

#[test]
fn layer_zero_adds_memory() {
    let g = toy_graph(4, 2);
    let mut m = ModelState::new(cfg(Variant::Tgn, 1, 4), &g, 1).unwrap().with_precision(Precision::Exact);
    let ev = *g.interaction(0);
    m.memory.stage(&[ev]).unwrap();
    m.memory.commit(&[0, 3], &Array::matrix(2, 4, vec![0.5, -0.5, 0.25, 1.0, 9.0, 9.0, 9.0, 9.0]));
    let h = m.layer_zero(&g, 0).unwrap();
    let expected: Vec<f64> = g.node_features(0).iter().zip([0.5, -0.5, 0.25, 1.0]).map(|(x, s)| x + s).collect();
    assert_eq!(h, expected);
}

#[test]
fn zero_message_inputs_give_sigmoid_of_zero() {
    let g = TemporalGraph::new(
        Array::zeros(&[2, 3]),
        vec![Partition::None; 2],
        vec![RawEvent { source: 0, target: 1, time: 1.0, label: 0, features: vec![0.0, 0.0] }],
        2,
    )
    .unwrap();
    let mut m = ModelState::new(cfg(Variant::Tgat, 1, 3), &g, 0).unwrap();
    m.params.insert("time.w".into(), Array::zeros(&[1, 3]));
    m.params.insert("time.b".into(), Array::filled(&[1, 3], std::f64::consts::FRAC_PI_2));
    let w = m.params["layer1.msg.w"].clone();
    // zero the time-encoding input rows so the pre-activation is exactly 0
    m.params.insert("layer1.msg.w".into(), Array::zeros(w.shape()));
    let msg = m.compute_message(&g, g.interaction(0), 0, 2.0, 1, &[0.0; 3], &[0.0; 3]).unwrap();
    assert!(msg.iter().all(|v| *v == 0.5), "{msg:?}");
}

#[test]
fn message_depends_only_on_elapsed_time() {
    let shift = 5.0;
    let g1 = toy_graph(4, 3);
    let events: Vec<RawEvent> = g1.raw_events().into_iter().map(|mut e| {
        e.time += shift;
        e
    }).collect();
    let g2 = TemporalGraph::new(g1.node_feature_matrix(), g1.partitions().to_vec(), events, 2).unwrap();
    let m = ModelState::new(cfg(Variant::Tgat, 1, 4), &g1, 9).unwrap();
    let hs = [0.1, 0.2, -0.3, 0.4];
    let hn = [-0.5, 0.6, 0.0, 0.2];
    let a = m.compute_message(&g1, g1.interaction(2), 0, 7.5, 1, &hn, &hs).unwrap();
    let b = m.compute_message(&g2, g2.interaction(2), 0, 7.5 + shift, 1, &hn, &hs).unwrap();
    assert_eq!(a, b);
}

#[test]
fn single_message_attention_passes_value() {
    let mut e = Expr::new(Precision::Exact);
    let q = e.constant(Array::row(vec![0.3, -0.2]));
    let msg = e.constant(Array::row(vec![0.9, 0.1]));
    let out = e.attention(q, msg, msg, vec![0, 1]);
    let v = crate::numerics::evaluate(&e, out, &ParamStore::new()).unwrap();
    assert_eq!(v.data(), &[0.9, 0.1]);
}

#[test]
fn aggregation_is_permutation_invariant() {
    let g = toy_graph(4, 4);
    for variant in [Variant::Tgat, Variant::Tgn] {
        let m = ModelState::new(cfg(variant, 1, 4), &g, 5).unwrap().with_precision(Precision::Exact);
        let msgs = vec![vec![0.1, 0.7, 0.3, 0.2], vec![0.9, 0.4, 0.5, 0.6], vec![0.2, 0.2, 0.8, 0.1]];
        let mut rev = msgs.clone();
        rev.reverse();
        let h = [0.3, -0.1, 0.5, 0.0];
        let a = m.aggregate(1, &msgs, &h).unwrap();
        let b = m.aggregate(1, &rev, &h).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12, "{variant:?}");
        }
    }
}

#[test]
fn summation_aggregate_uses_message_sum() {
    let g = toy_graph(4, 4);
    let m = ModelState::new(cfg(Variant::Tgn, 1, 4), &g, 5).unwrap().with_precision(Precision::Exact);
    let h = [0.3, -0.1, 0.5, 0.0];
    let two = m.aggregate(1, &[vec![0.1, 0.2, 0.3, 0.4], vec![0.5, 0.1, 0.0, 0.2]], &h).unwrap();
    let one = m.aggregate(1, &[vec![0.6, 0.3, 0.3, 0.6]], &h).unwrap();
    for (x, y) in two.iter().zip(&one) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn empty_aggregate_uses_zero_vector() {
    let g = toy_graph(4, 4);
    let m = ModelState::new(cfg(Variant::Tgat, 1, 4), &g, 5).unwrap().with_precision(Precision::Exact);
    let h = [0.3, -0.1, 0.5, 0.0];
    let empty = m.aggregate(1, &[], &h).unwrap();
    let zero = m.aggregate(1, &[vec![0.0; 4]], &h).unwrap();
    // attention over one zero message yields the zero aggregate too
    assert_eq!(empty, zero);
}

#[test]
fn isolated_node_embedding_depends_on_layer_zero_only() {
    let g = toy_graph(4, 6);
    let m = ModelState::new(cfg(Variant::Tgat, 1, 4), &g, 2).unwrap().with_precision(Precision::Exact);
    // node 5 has no events before t = 1
    let h = m.embed(&g, 5, 1.0).unwrap();
    let h0 = m.layer_zero(&g, 5).unwrap();
    let direct = m.aggregate(1, &[], &h0).unwrap();
    assert_eq!(h.vector, direct);
}

#[test]
fn embedding_ignores_future_events() {
    let g = toy_graph(4, 7);
    for variant in [Variant::Tgat, Variant::Tgn] {
        let layers = if variant == Variant::Tgat { 2 } else { 1 };
        let m = ModelState::new(cfg(variant, layers, 4), &g, 3).unwrap();
        let t = 5.0;
        let mut events = g.raw_events();
        for e in events.iter_mut().filter(|e| e.time >= t) {
            e.features = vec![42.0, -42.0];
            e.target = 5;
        }
        events.push(RawEvent { source: 0, target: 5, time: t, label: 0, features: vec![1.0, 1.0] });
        let g2 = TemporalGraph::new(g.node_feature_matrix(), g.partitions().to_vec(), events, 2).unwrap();
        for v in 0..6 {
            assert_eq!(m.embed(&g, v, t).unwrap(), m.embed(&g2, v, t).unwrap(), "{variant:?} node {v}");
        }
    }
}

#[test]
fn identical_nodes_get_identical_embeddings() {
    let feats = Array::matrix(4, 2, vec![0.5, 0.5, 0.5, 0.5, 0.1, 0.2, 0.3, 0.4]);
    let ev = |s, t, time: f64| RawEvent { source: s, target: t, time, label: 0, features: vec![1.0, 2.0] };
    let g = TemporalGraph::new(feats, vec![Partition::None; 4], vec![ev(0, 2, 1.0), ev(1, 2, 1.0)], 2).unwrap();
    let m = ModelState::new(cfg(Variant::Tgat, 2, 2), &g, 3).unwrap();
    assert_eq!(m.embed(&g, 0, 3.0).unwrap().vector, m.embed(&g, 1, 3.0).unwrap().vector);
}

#[test]
fn unknown_node_is_an_error() {
    let g = toy_graph(4, 1);
    let m = ModelState::new(cfg(Variant::Tgat, 1, 4), &g, 3).unwrap();
    assert!(matches!(m.embed(&g, 99, 1.0), Err(ModelError::Graph(_))));
}

#[test]
fn memory_update_semantics() {
    let g = toy_graph(4, 8);
    let mut m = ModelState::new(cfg(Variant::Tgn, 1, 4), &g, 3).unwrap();
    let before = m.clone();
    m.memory_update(&g, &[]).unwrap();
    assert_eq!(m, before);

    let batch = &g.interactions()[0..2]; // (0,3), (1,4)
    let mut twin = m.clone();
    m.memory_update(&g, batch).unwrap();
    twin.memory_update(&g, batch).unwrap();
    assert_eq!(m, twin);
    for v in [2u32, 5] {
        assert_eq!(m.memory.row(v), before.memory.row(v));
    }
    assert_ne!(m.memory.row(0), before.memory.row(0));
    assert_eq!(m.memory.last_update(3), 1.0);
    assert!(m.memory.last_updates().iter().all(|t| *t <= m.memory.clock()));

    let err = m.memory_update(&g, &g.interactions()[0..1]);
    assert!(matches!(err, Err(ModelError::OutOfOrder(_))));
}

#[test]
fn model_gradients_match_finite_differences() {
    let g = toy_graph(3, 10);
    for (variant, layers, mode) in [
        (Variant::Tgat, 2, ScoreMode::Dot),
        (Variant::Tgn, 1, ScoreMode::MlpConcat),
        (Variant::Tgn, 2, ScoreMode::Dot),
    ] {
        let mut c = cfg(variant, layers, 4);
        c.score_mode = mode;
        let mut m = ModelState::new(c, &g, 11).unwrap().with_precision(Precision::Exact);
        if variant == Variant::Tgn {
            m.memory.stage(&g.interactions()[0..3]).unwrap();
            m.flush_memory(&g).unwrap();
            m.memory.stage(&g.interactions()[3..5]).unwrap();
        }
        // Init frequencies near zero leave gradients below the difference noise.
        let t = m.dims.time;
        m.params.insert("time.w".into(), Array::row((0..t).map(|i| 0.3 + 0.17 * i as f64).collect()));
        m.params.insert("time.b".into(), Array::row((0..t).map(|i| 0.4 - 0.21 * i as f64).collect()));
        let mut f = m.forward(&g);
        let h = f.embeddings(&[(0, 6.5), (3, 6.5), (4, 6.5), (1, 6.5)]);
        let src = f.expr.gather_rows(h, vec![0, 0, 3]);
        let cand = f.expr.gather_rows(h, vec![1, 2, 2]);
        let s = f.scores(cand, src, 3);
        let l = f.expr.log_sigmoid(s);
        let root = f.expr.mean(l);
        let names = param_names(&m.params);
        let err = finite_difference_check(&f.expr, root, &m.params, &names, 1e-5).unwrap();
        assert!(err < 1e-4, "{variant:?}/{layers}/{mode:?}: {err}");
    }
}

#[test]
fn mlp_score_matches_graph_scorer() {
    let g = toy_graph(4, 12);
    let mut c = cfg(Variant::Tgat, 1, 4);
    c.score_mode = ScoreMode::MlpConcat;
    let m = ModelState::new(c, &g, 13).unwrap().with_precision(Precision::Exact);
    let a = [0.2, -0.4, 0.9, 0.1];
    let b = [0.5, 0.5, -0.3, 0.8];
    let mut e = Expr::new(Precision::Exact);
    let an = e.constant(Array::row(a.to_vec()));
    let bn = e.constant(Array::row(b.to_vec()));
    let s = forward::score_block(&mut e, ScoreMode::MlpConcat, an, bn, 1);
    let graph_score = crate::numerics::evaluate(&e, s, &m.params).unwrap().item();
    assert!((graph_score - m.score(&a, &b)).abs() < 1e-12);
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let g = toy_graph(4, 14);
    let mut m = ModelState::new(cfg(Variant::Tgn, 1, 4), &g, 15).unwrap();
    m.memory_update(&g, &g.interactions()[0..3]).unwrap();
    m.memory.stage(&g.interactions()[3..4]).unwrap();
    let mut buf = Vec::new();
    write_checkpoint(&m, &mut buf).unwrap();
    let back = read_checkpoint(&mut buf.as_slice()).unwrap();
    assert_eq!(back, m);
    let mut again = Vec::new();
    write_checkpoint(&back, &mut again).unwrap();
    assert_eq!(buf, again);
}

