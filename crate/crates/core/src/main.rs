use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hardneg::graph::SyntheticConfig;
use hardneg::harness::{cmd_export, cmd_probe, cmd_synth, cmd_train_eval, parse_config, HarnessError, RunSpec};
use hardneg::sampling::Strategy;

#[derive(Parser)]
#[command(name = "hardneg", version, about = "Temporal GNN link prediction with hard negative sampling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Overrides applied on top of the config file.
#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Run only these seeds instead of the configured list.
    #[arg(long)]
    seed: Vec<u64>,
    #[arg(long)]
    strategy: Option<Strategy>,
    #[arg(long)]
    topk: Option<usize>,
    #[arg(long)]
    refresh_period: Option<usize>,
    #[arg(long)]
    recompute_freq: Option<usize>,
    /// Keep only the first this-many interactions.
    #[arg(long)]
    truncate: Option<usize>,
    #[arg(long)]
    deterministic: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train and test once per seed and write a study report.
    TrainEval {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Per-candidate loss and gradient-norm correlation of a checkpoint.
    Probe {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 50)]
        interactions: usize,
        #[arg(long, default_value_t = 64)]
        candidates: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Embedding snapshots of every node at the given times.
    Export {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long = "at", required = true)]
        timestamps: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a planted synthetic interaction log.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        sources: usize,
        #[arg(long, default_value_t = 20)]
        targets: usize,
        #[arg(long, default_value_t = 5000)]
        events: usize,
        #[arg(long, default_value_t = 0.9)]
        recurrence: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn resolve(run: &RunArgs) -> Result<RunSpec, HarnessError> {
    let mut spec = parse_config(&run.config)?;
    if !run.seed.is_empty() {
        spec.seeds = run.seed.clone();
    }
    let sampler = &mut spec.train.sampler;
    if let Some(s) = run.strategy {
        sampler.strategy = s;
    }
    if let Some(k) = run.topk {
        sampler.top_k = k;
    }
    if let Some(p) = run.refresh_period {
        sampler.refresh_period = p;
    }
    if let Some(f) = run.recompute_freq {
        sampler.recompute_frequency = f;
    }
    if run.truncate.is_some() {
        spec.dataset.truncate = run.truncate;
    }
    spec.deterministic |= run.deterministic;
    spec.validate()?;
    Ok(spec)
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::TrainEval { run } => {
            let spec = resolve(&run)?;
            let report = cmd_train_eval(&spec)?;
            print!("{}", report.to_text());
            if !report.failures.is_empty() {
                return Err(HarnessError::SeedsFailed(report.failures.len()));
            }
        }
        Command::Probe { run, checkpoint, interactions, candidates, out } => {
            let spec = resolve(&run)?;
            let reports = cmd_probe(&spec, &checkpoint, interactions, candidates, &out)?;
            println!("probed {} interactions into {}", reports.len(), out.display());
        }
        Command::Export { run, checkpoint, timestamps, out } => {
            let spec = resolve(&run)?;
            for p in cmd_export(&spec, &checkpoint, &timestamps, &out)? {
                println!("{}", p.display());
            }
        }
        Command::Synth { out, sources, targets, events, recurrence, seed } => {
            if !(0.0..=1.0).contains(&recurrence) || sources == 0 || targets == 0 || events == 0 {
                return Err(HarnessError::Config("synth: counts must be positive and recurrence in [0, 1]".into()));
            }
            let cfg = SyntheticConfig {
                n_sources: sources,
                n_targets: targets,
                n_events: events,
                recurrence_prob: recurrence,
                seed,
                ..Default::default()
            };
            cmd_synth(&cfg, &out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
