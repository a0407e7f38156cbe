use super::*;
use crate::model::ModelState;
use crate::sampling::Strategy;
use crate::training::StoppingRule;

const MINIMAL: &str = r#"
[dataset.synthetic]
n_events = 300

[train.sampler]
strategy = "hard-topk"
"#;

fn tiny(dir: &Path) -> RunSpec {
    let mut spec = RunSpec::synthetic(SyntheticConfig { n_sources: 6, n_targets: 4, n_events: 200, ..Default::default() });
    spec.model = ModelConfig { embed_dim: 6, time_dim: 3, ..ModelConfig::tgn() };
    spec.train = TrainConfig { epochs: 1, batch_size: 25, stopping: StoppingRule::MaxEpochs, ..Default::default() };
    spec.seeds = vec![0, 1];
    spec.output = dir.to_path_buf();
    spec
}

#[test]
fn minimal_config_is_fully_defaulted() {
    let spec = parse_config_str(MINIMAL).unwrap();
    let s = &spec.train.sampler;
    assert_eq!((s.strategy, s.top_k, s.refresh_period, s.recompute_frequency), (Strategy::HardTopk, 5, 20, 1));
    assert_eq!(spec.seeds, vec![0, 1, 2, 3, 4]);
    assert_eq!(spec.dataset.synthetic.as_ref().unwrap().n_events, 300);
    assert_eq!(spec.train.batch_size, 200);
    assert_eq!(parse_config_str(&spec.to_toml()).unwrap(), spec);
}

#[test]
fn config_errors() {
    let err = parse_config_str(&format!("{MINIMAL}\n[model]\nembed_dimm = 3\n")).unwrap_err();
    assert!(matches!(&err, HarnessError::Config(m) if m.contains("embed_dimm")), "{err}");
    assert_eq!(err.exit_code(), 1);
    assert!(matches!(parse_config_str("seeds = [1]"), Err(HarnessError::Config(_))));
    assert!(matches!(parse_config_str("[dataset]\npath = \"/nonexistent/log.csv\""), Err(HarnessError::Config(_))));
    assert!(matches!(parse_config_str(&format!("seeds = []\n{MINIMAL}")), Err(HarnessError::Config(_))));
    assert!(matches!(parse_config_str("[dataset.synthetic]\nn_events = \"many\""), Err(HarnessError::Config(_))));
}

fn row(seed: u64, mrr: f64) -> SeedResult {
    let metrics = RankingMetrics { mrr, recall_at: BTreeMap::from([(1, mrr / 2.0)]), n_evaluated: 3 };
    SeedResult { seed, metrics, best_epoch: Some(0), wall_time_s: 1.0 }
}

#[test]
fn aggregation_arithmetic() {
    let rows = [row(0, 0.1), row(1, 0.2), row(2, 0.6)];
    let (mean, std) = aggregate(&rows);
    assert!((mean["MRR"] - 0.3).abs() < 1e-12);
    assert!((std.unwrap()["MRR"] - 0.264575131106459).abs() < 1e-12);
    let (one, none) = aggregate(&rows[..1]);
    assert_eq!(one["MRR"], 0.1);
    assert!(none.is_none());
}

#[test]
fn train_eval_writes_every_seed_and_reproduces() {
    let dir = tempfile::tempdir().unwrap();
    let spec = tiny(dir.path());
    let report = cmd_train_eval(&spec).unwrap();
    assert_eq!(report.rows.len(), 2);
    assert!(report.failures.is_empty() && report.std.is_some());
    let mean = report.rows.iter().map(|r| r.metrics.mrr).sum::<f64>() / 2.0;
    assert!((report.mean["MRR"] - mean).abs() < 1e-12);
    for seed in [0, 1] {
        for f in ["epochs.csv", "metrics.txt", "model.ckpt"] {
            assert!(dir.path().join(format!("seed-{seed}")).join(f).exists(), "{f}");
        }
    }
    let echoed = parse_config(&dir.path().join("config.toml")).unwrap();
    assert_eq!(echoed, spec);
    let again = cmd_train_eval(&echoed).unwrap();
    assert_eq!(again.rows.iter().map(|r| &r.metrics).collect::<Vec<_>>(), report.rows.iter().map(|r| &r.metrics).collect::<Vec<_>>());
    assert_eq!(again.fingerprint, report.fingerprint);
    assert!(fs::read_to_string(dir.path().join("report.csv")).unwrap().contains("\nmean,"));
}

#[test]
fn one_failing_seed_keeps_the_others() {
    let dir = tempfile::tempdir().unwrap();
    let spec = tiny(dir.path());
    fs::write(dir.path().join("seed-1"), "blocks the directory").unwrap();
    let report = cmd_train_eval(&spec).unwrap();
    assert_eq!(report.rows.iter().map(|r| r.seed).collect::<Vec<_>>(), vec![0]);
    assert_eq!(report.failures.len(), 1);
    assert!(report.std.is_none());
    assert!(dir.path().join("seed-0/model.ckpt").exists());
}

#[test]
fn probe_and_export_commands() {
    let dir = tempfile::tempdir().unwrap();
    let spec = RunSpec { seeds: vec![0], ..tiny(dir.path()) };
    cmd_train_eval(&spec).unwrap();
    let ckpt = dir.path().join("seed-0/model.ckpt");

    let empty = cmd_probe(&spec, &ckpt, 0, 4, &dir.path().join("p0.csv")).unwrap();
    assert!(empty.is_empty());
    assert_eq!(fs::read_to_string(dir.path().join("p0.csv")).unwrap().lines().count(), 1);
    let reports = cmd_probe(&spec, &ckpt, 3, 4, &dir.path().join("p3.csv")).unwrap();
    assert_eq!(reports.len(), 3);
    assert!(reports.iter().all(|r| r.candidates.len() == 4));
    assert_eq!(fs::read_to_string(dir.path().join("p3.csv")).unwrap().lines().count(), 4);
    assert!(matches!(cmd_probe(&spec, &dir.path().join("none.ckpt"), 1, 1, &dir.path().join("x")), Err(HarnessError::Config(_))));

    let files = cmd_export(&spec, &ckpt, &[0.0, 50.0, 100.0], &dir.path().join("a")).unwrap();
    let again = cmd_export(&spec, &ckpt, &[0.0, 50.0, 100.0], &dir.path().join("b")).unwrap();
    assert_eq!(files.len(), 3);
    for (a, b) in files.iter().zip(&again) {
        let (ta, tb) = (fs::read_to_string(a).unwrap(), fs::read_to_string(b).unwrap());
        assert_eq!(ta, tb);
        assert!(ta.lines().all(|l| l.split(',').count() == 6 + 2));
    }
    let cut = RunSpec { dataset: DatasetSpec { truncate: Some(20), ..spec.dataset.clone() }, ..spec.clone() };
    assert!(matches!(cmd_export(&cut, &ckpt, &[1.0], &dir.path().join("c")), Err(HarnessError::Config(_))));

    // Before the first event the embedding is the merge layer applied to
    // the layer-zero vector and an empty aggregate.
    let model: ModelState = load_checkpoint(&ckpt).unwrap();
    let graph = load_dataset(&spec.dataset).unwrap();
    assert!(graph.interaction(0).time > 0.0);
    let (w, b) = (&model.params["layer1.merge.w"], &model.params["layer1.merge.b"]);
    let early = crate::evaluation::read_snapshot(&files[0]).unwrap();
    for (v, _, values) in &early.rows {
        let h0 = model.layer_zero(&graph, *v).unwrap();
        for (j, got) in values.iter().enumerate() {
            let z = b.get(0, j) + h0.iter().enumerate().map(|(i, x)| x * w.get(i, j)).sum::<f64>();
            assert!((z.tanh() - got).abs() <= 1e-5, "{v} {j}");
        }
    }
}

#[test]
fn synth_writes_a_loadable_log() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SyntheticConfig { n_sources: 4, n_targets: 3, n_events: 50, ..Default::default() };
    let bin = dir.path().join("log.bin");
    cmd_synth(&cfg, &bin).unwrap();
    assert_eq!(load_dataset(&DatasetSpec { path: Some(bin), ..Default::default() }).unwrap(), generate_synthetic(&cfg));
    let csv = dir.path().join("log.csv");
    cmd_synth(&cfg, &csv).unwrap();
    let g = load_dataset(&DatasetSpec { path: Some(csv), truncate: Some(20), ..Default::default() }).unwrap();
    assert_eq!(g.len(), 20);
}
