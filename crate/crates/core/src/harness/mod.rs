//! Run configuration, multi-seed orchestration and report files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::evaluation::{evaluate, export_snapshot, CandidatePolicy, EvalError, RankingMetrics};
use crate::graph::{
    chronological_split, generate_synthetic, load_interactions, GraphError, GraphFormat, NodeId, SplitSpec,
    SyntheticConfig, TemporalGraph,
};
use crate::model::{load_checkpoint, save_checkpoint, ModelConfig, ModelError, ModelState};
use crate::training::{gradient_variance_probe, train, EpochMetrics, TrainConfig, TrainError, VarianceProbeReport};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{0} seed(s) failed, see the report")]
    SeedsFailed(usize),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl HarnessError {
    /// 1 for configuration problems, 2 for everything that fails at run time.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 1,
            _ => 2,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.display().to_string(), source }
}

fn write_file(path: &Path, text: &str) -> Result<(), HarnessError> {
    fs::write(path, text).map_err(io_err(path))
}

/// Where the interaction log comes from: a file or the planted generator.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub path: Option<PathBuf>,
    pub synthetic: Option<SyntheticConfig>,
    /// Keep only the first this-many interactions.
    pub truncate: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSpec {
    pub policy: CandidatePolicy,
    pub batch_size: usize,
}

impl Default for EvalSpec {
    fn default() -> Self {
        Self { policy: CandidatePolicy::AllNodes, batch_size: 200 }
    }
}

fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

fn default_output() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub dataset: DatasetSpec,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    /// Single-threaded execution is always bit-reproducible; the flag is
    /// recorded so the effective config states it.
    #[serde(default)]
    pub deterministic: bool,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalSpec,
}

impl RunSpec {
    pub fn synthetic(cfg: SyntheticConfig) -> Self {
        Self {
            dataset: DatasetSpec { synthetic: Some(cfg), ..Default::default() },
            seeds: default_seeds(),
            output: default_output(),
            deterministic: false,
            split: SplitSpec::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalSpec::default(),
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let cfg = |m: String| HarnessError::Config(m);
        match (&self.dataset.path, &self.dataset.synthetic) {
            (Some(_), Some(_)) => return Err(cfg("dataset: give either path or synthetic, not both".into())),
            (None, None) => return Err(cfg("dataset: missing path or synthetic section".into())),
            (Some(p), None) if !p.exists() => return Err(cfg(format!("dataset: {} does not exist", p.display()))),
            _ => {}
        }
        if self.dataset.truncate == Some(0) {
            return Err(cfg("dataset: truncate must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(cfg("seeds: at least one seed is required".into()));
        }
        if self.eval.batch_size < 1 {
            return Err(cfg("eval: batch_size must be at least 1".into()));
        }
        self.split.validate().map_err(|e| cfg(e.to_string()))?;
        self.model.validate().map_err(|e| cfg(format!("model: {e}")))?;
        self.train.validate().map_err(|e| cfg(format!("train: {e}")))?;
        Ok(())
    }

    /// The fully resolved configuration as TOML.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run spec serializes")
    }

    /// SHA-256 of the effective configuration, hex encoded.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }
}

pub fn parse_config_str(text: &str) -> Result<RunSpec, HarnessError> {
    let spec: RunSpec = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
    spec.validate()?;
    Ok(spec)
}

pub fn parse_config(path: &Path) -> Result<RunSpec, HarnessError> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
    parse_config_str(&text)
}

pub fn load_dataset(spec: &DatasetSpec) -> Result<TemporalGraph, HarnessError> {
    let g = match (&spec.path, &spec.synthetic) {
        (Some(p), _) => load_interactions(p, GraphFormat::from_path(p))?,
        (None, Some(cfg)) => generate_synthetic(cfg),
        (None, None) => return Err(HarnessError::Config("dataset: missing path or synthetic section".into())),
    };
    Ok(match spec.truncate {
        Some(m) if m < g.len() => g.truncated(m),
        _ => g,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedResult {
    pub seed: u64,
    pub metrics: RankingMetrics,
    pub best_epoch: Option<usize>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyReport {
    pub rows: Vec<SeedResult>,
    pub failures: Vec<(u64, String)>,
    pub mean: BTreeMap<String, f64>,
    /// Sample standard deviation, absent below two successful seeds.
    pub std: Option<BTreeMap<String, f64>>,
    pub fingerprint: String,
    pub wall_time_s: f64,
}

/// Column-wise mean and sample standard deviation of the metric rows.
pub fn aggregate(rows: &[SeedResult]) -> (BTreeMap<String, f64>, Option<BTreeMap<String, f64>>) {
    let mut columns: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in rows {
        for (k, v) in r.metrics.columns() {
            columns.entry(k).or_default().push(v);
        }
        columns.entry("wall_time_s".into()).or_default().push(r.wall_time_s);
    }
    let mean: BTreeMap<String, f64> =
        columns.iter().map(|(k, v)| (k.clone(), v.iter().sum::<f64>() / v.len() as f64)).collect();
    if rows.len() < 2 {
        return (mean, None);
    }
    let std = columns
        .iter()
        .map(|(k, v)| {
            let m = mean[k];
            let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64;
            (k.clone(), var.sqrt())
        })
        .collect();
    (mean, Some(std))
}

impl StudyReport {
    pub fn to_text(&self) -> String {
        let mut out = format!("fingerprint={}\nwall_time_s={:.3}\n", self.fingerprint, self.wall_time_s);
        let mut header: Vec<String> = self.rows.first().map_or(Vec::new(), |r| r.metrics.columns().into_iter().map(|c| c.0).collect());
        if !header.is_empty() {
            header.push("wall_time_s".into());
        }
        out.push_str(&format!("seed,best_epoch,{}\n", header.join(",")));
        for r in &self.rows {
            let mut cols: BTreeMap<String, f64> = r.metrics.columns().into_iter().collect();
            cols.insert("wall_time_s".into(), r.wall_time_s);
            let vals: Vec<String> = header.iter().map(|k| cols[k].to_string()).collect();
            let epoch = r.best_epoch.map_or("-".into(), |e| e.to_string());
            out.push_str(&format!("{},{},{}\n", r.seed, epoch, vals.join(",")));
        }
        let line = |name: &str, m: &BTreeMap<String, f64>| {
            format!("{name},-,{}\n", header.iter().map(|k| m[k].to_string()).collect::<Vec<_>>().join(","))
        };
        if !self.rows.is_empty() {
            out.push_str(&line("mean", &self.mean));
        }
        if let Some(s) = &self.std {
            out.push_str(&line("std", s));
        }
        for (seed, err) in &self.failures {
            out.push_str(&format!("failed seed {seed}: {err}\n"));
        }
        out
    }
}

fn seed_dir(spec: &RunSpec, seed: u64) -> PathBuf {
    spec.output.join(format!("seed-{seed}"))
}

fn run_seed(spec: &RunSpec, graph: &TemporalGraph, seed: u64) -> Result<SeedResult, HarnessError> {
    let started = Instant::now();
    let dir = seed_dir(spec, seed);
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let split = chronological_split(graph, &spec.split)?;
    let cfg = TrainConfig { seed, ..spec.train.clone() };
    let outcome = train(graph, &split, &spec.model, &cfg, &mut ())?;
    let mut epochs = EpochMetrics::HEADER.to_string();
    for h in &outcome.history {
        epochs.push('\n');
        epochs.push_str(&h.to_delimited());
    }
    epochs.push('\n');
    write_file(&dir.join("epochs.csv"), &epochs)?;
    save_checkpoint(&outcome.best, &dir.join("model.ckpt"))?;
    let mut model = outcome.best;
    let (metrics, _) = evaluate(&mut model, graph, split.test.clone(), spec.eval.policy, spec.eval.batch_size)?;
    let wall = started.elapsed().as_secs_f64();
    write_file(&dir.join("metrics.txt"), &format!("{}wall_time_s={wall:.3}\n", metrics.to_key_values()))?;
    Ok(SeedResult { seed, metrics, best_epoch: outcome.best_epoch, wall_time_s: wall })
}

/// Trains and tests once per seed. Every seed writes its own directory; a
/// failing seed is recorded and the others still run.
pub fn cmd_train_eval(spec: &RunSpec) -> Result<StudyReport, HarnessError> {
    spec.validate()?;
    let started = Instant::now();
    fs::create_dir_all(&spec.output).map_err(io_err(&spec.output))?;
    let effective = spec.to_toml();
    log::info!("effective config:\n{effective}");
    write_file(&spec.output.join("config.toml"), &effective)?;
    let graph = load_dataset(&spec.dataset)?;
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for &seed in &spec.seeds {
        match run_seed(spec, &graph, seed) {
            Ok(r) => {
                log::info!("seed {seed}: {}", r.metrics.to_key_values());
                rows.push(r);
            }
            Err(e) => {
                log::error!("seed {seed} failed: {e}");
                let dir = seed_dir(spec, seed);
                let _ = fs::create_dir_all(&dir);
                let _ = fs::write(dir.join("error.txt"), format!("{e}\n"));
                failures.push((seed, e.to_string()));
            }
        }
    }
    let (mean, std) = aggregate(&rows);
    let report = StudyReport {
        rows,
        failures,
        mean,
        std,
        fingerprint: spec.fingerprint(),
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    write_file(&spec.output.join("report.csv"), &report.to_text())?;
    Ok(report)
}

/// Loads a checkpoint and the log it is used with, checking that the two
/// agree on the node registry and that pending memory events exist in the log.
fn load_pair(spec: &RunSpec, checkpoint: &Path) -> Result<(ModelState, TemporalGraph), HarnessError> {
    if !checkpoint.exists() {
        return Err(HarnessError::Config(format!("checkpoint {} does not exist", checkpoint.display())));
    }
    let model = load_checkpoint(checkpoint)?;
    let graph = load_dataset(&spec.dataset)?;
    let nodes = model.memory.nodes();
    if model.config.use_memory && nodes != graph.node_count() {
        return Err(HarnessError::Config(format!(
            "checkpoint memory covers {nodes} nodes, the log has {}",
            graph.node_count()
        )));
    }
    if let Some(p) = model.memory.pending().values().find(|p| p.ordinal >= graph.len()) {
        return Err(HarnessError::Config(format!("checkpoint refers to interaction {} beyond the log", p.ordinal)));
    }
    Ok((model, graph))
}

/// One row per probed interaction: its endpoints, the rank correlation and
/// the mean loss and gradient norm over its candidates.
pub fn probe_table(reports: &[VarianceProbeReport]) -> String {
    let mut out = String::from("ordinal,source,target,time,spearman,mean_loss,mean_gradient_norm\n");
    for r in reports {
        let n = r.losses.len().max(1) as f64;
        let rho = r.spearman.map_or("NA".into(), |s| s.to_string());
        out.push_str(&format!(
            "{},{},{},{},{rho},{},{}\n",
            r.interaction.ordinal,
            r.interaction.source,
            r.interaction.target,
            r.interaction.time,
            r.losses.iter().sum::<f64>() / n,
            r.gradient_norms.iter().sum::<f64>() / n,
        ));
    }
    out
}

/// Probes `n_interactions` test interactions drawn without replacement,
/// each against `n_candidates` random non-endpoint nodes. Test
/// interactions follow everything the checkpoint's memory has seen.
pub fn cmd_probe(
    spec: &RunSpec,
    checkpoint: &Path,
    n_interactions: usize,
    n_candidates: usize,
    out: &Path,
) -> Result<Vec<VarianceProbeReport>, HarnessError> {
    let (model, graph) = load_pair(spec, checkpoint)?;
    let split = chronological_split(&graph, &spec.split)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seeds[0]);
    let n = n_interactions.min(split.test.len());
    let mut picked: Vec<usize> = sample(&mut rng, split.test.len(), n).into_iter().map(|i| split.test.start + i).collect();
    picked.sort_unstable();
    let mut reports = Vec::with_capacity(n);
    for o in picked {
        let e = *graph.interaction(o);
        let pool: Vec<NodeId> =
            (0..graph.node_count() as NodeId).filter(|&c| c != e.source && c != e.target).collect();
        let k = n_candidates.min(pool.len());
        let mut cands: Vec<NodeId> = sample(&mut rng, pool.len(), k).into_iter().map(|i| pool[i]).collect();
        cands.sort_unstable();
        reports.push(gradient_variance_probe(&model, &graph, &e, &cands)?);
    }
    write_file(out, &probe_table(&reports))?;
    Ok(reports)
}

/// Writes one snapshot file per timestamp into `out_dir`.
pub fn cmd_export(
    spec: &RunSpec,
    checkpoint: &Path,
    timestamps: &[f64],
    out_dir: &Path,
) -> Result<Vec<PathBuf>, HarnessError> {
    let (model, graph) = load_pair(spec, checkpoint)?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut paths = Vec::with_capacity(timestamps.len());
    for (i, &t) in timestamps.iter().enumerate() {
        let path = out_dir.join(format!("snapshot-{i}.csv"));
        export_snapshot(&model, &graph, t, &path)?;
        paths.push(path);
    }
    Ok(paths)
}

/// Writes a planted synthetic log, as jodie-csv for `.csv` paths and in
/// the binary format otherwise.
pub fn cmd_synth(cfg: &SyntheticConfig, out: &Path) -> Result<(), HarnessError> {
    let g = generate_synthetic(cfg);
    match GraphFormat::from_path(out) {
        GraphFormat::JodieCsv => {
            let file = fs::File::create(out).map_err(io_err(out))?;
            crate::graph::write_jodie_csv(&g, std::io::BufWriter::new(file)).map_err(io_err(out))?;
        }
        GraphFormat::Binary => crate::graph::save_binary(&g, out)?,
    }
    Ok(())
}

#[cfg(test)]
mod tests;
