//! Command-line front end.
//!
//! Any configuration key can be overridden with `--key=value` (or
//! `--key value`), using dotted paths for nested tables, e.g.
//! `--local.hidden_dim=16 --generator.bias_amplitude=2.0 --mode=direct-only`.
//! Hyphens in keys are read as underscores, so `--tie-eps 0` works too.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mlrf::data::{generate_corpus, write_dataset};
use mlrf::pipeline::{
    run_ablation_suite, run_experiment_cached, run_stage, AblationAxis, ExperimentConfig, RunDir, Stage,
    StageCache, StageOutcome,
};

#[derive(Parser, Debug)]
#[command(name = "mlrf", version, about = "Local-global ranking fusion for continuous emotion regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory holding one sub-directory per configuration fingerprint.
    #[arg(long, default_value = "runs")]
    runs_root: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct StageArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    seed: Option<u64>,
    /// Use this directory instead of `<runs-root>/<fingerprint>`.
    #[arg(long)]
    run_dir: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the synthetic corpus to a dataset directory.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the local ranker.
    TrainLocal(StageArgs),
    /// Predict local ranks for sampled pairs and build global rank traces.
    Rank(StageArgs),
    /// Train the fusion model.
    TrainFusion(StageArgs),
    /// Predict emotion traces for test videos.
    Predict(StageArgs),
    /// Score test predictions and write report.json.
    Evaluate(StageArgs),
    /// Run every stage end to end.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        run_dir: Option<PathBuf>,
        /// Print the report as JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Sweep one axis over values and seeds.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Comma-separated master seeds.
        #[arg(long, value_delimiter = ',', required = true)]
        seed: Vec<u64>,
        /// K (pairs per video), w (window) or mode.
        #[arg(long)]
        axis: String,
        /// Comma-separated values for the axis.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        /// Where to write the table as JSON; defaults to `<runs-root>/ablation-<axis>.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

const KNOWN_FLAGS: &[&str] = &[
    "config", "runs-root", "runs_root", "seed", "run-dir", "run_dir", "out", "axis", "values", "json", "help",
    "version",
];

type Overrides = Vec<(String, String)>;

/// Splits raw arguments into those clap understands and `key=value` overrides.
fn split_overrides(args: Vec<String>) -> Result<(Vec<String>, Overrides)> {
    let mut known = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.into_iter().peekable();
    while let Some(arg) = it.next() {
        let Some(flag) = arg.strip_prefix("--").filter(|f| !f.is_empty()) else {
            known.push(arg);
            continue;
        };
        let (name, value) = match flag.split_once('=') {
            Some((n, v)) => (n.to_string(), Some(v.to_string())),
            None => (flag.to_string(), None),
        };
        if KNOWN_FLAGS.contains(&name.as_str()) {
            known.push(arg);
            continue;
        }
        let value = match value {
            Some(v) => v,
            None => match it.peek() {
                Some(v) if !v.starts_with("--") => it.next().unwrap(),
                _ => bail!("override `--{name}` needs a value"),
            },
        };
        overrides.push((name.replace('-', "_"), value));
    }
    Ok((known, overrides))
}

fn load_config(common: &Common, overrides: &[(String, String)], seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut overrides = overrides.to_vec();
    if let Some(seed) = seed {
        overrides.push(("seed".into(), seed.to_string()));
    }
    let cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path, &overrides),
        None => ExperimentConfig::from_toml_with_overrides("", &overrides),
    };
    cfg.map_err(|e| e.in_stage("config")).map_err(Into::into)
}

fn run_dir(common: &Common, explicit: &Option<PathBuf>, cfg: &ExperimentConfig) -> RunDir {
    match explicit {
        Some(dir) => RunDir::new(dir),
        None => RunDir::for_config(&common.runs_root, cfg),
    }
}

fn stage(args: &StageArgs, overrides: &[(String, String)], stage: Stage) -> Result<()> {
    let cfg = load_config(&args.common, overrides, args.seed)?;
    let dir = run_dir(&args.common, &args.run_dir, &cfg);
    match run_stage(&cfg, stage, &dir)? {
        StageOutcome::Skipped => println!("{}: skipped (mode {})", stage.name(), cfg.mode.as_str()),
        StageOutcome::Done => println!("{}: done -> {}", stage.name(), dir.root.display()),
        StageOutcome::Report(report) => {
            print!("{}", report.to_table());
            println!("report: {}", dir.report().display());
        }
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn execute(cli: Cli, overrides: &[(String, String)]) -> Result<()> {
    match cli.command {
        Command::GenData { common, out } => {
            let cfg = load_config(&common, overrides, None)?;
            let corpus = generate_corpus(&cfg.generator)
                .and_then(|c| write_dataset(&c, &out).map(|_| c))
                .map_err(|e| e.in_stage("gen-data"))?;
            println!("gen-data: {} videos -> {}", corpus.videos.len(), out.display());
        }
        Command::TrainLocal(args) => stage(&args, overrides, Stage::TrainLocal)?,
        Command::Rank(args) => stage(&args, overrides, Stage::Rank)?,
        Command::TrainFusion(args) => stage(&args, overrides, Stage::TrainFusion)?,
        Command::Predict(args) => stage(&args, overrides, Stage::Predict)?,
        Command::Evaluate(args) => stage(&args, overrides, Stage::Evaluate)?,
        Command::Run {
            common,
            seed,
            run_dir: explicit,
            json,
        } => {
            let cfg = load_config(&common, overrides, Some(seed))?;
            let dir = run_dir(&common, &explicit, &cfg);
            let report = run_experiment_cached(&cfg, &dir, &mut StageCache::new())?;
            if json {
                print!("{}", report.to_json()?);
            } else {
                print!("{}", report.to_table());
                println!("artifacts: {}", dir.root.display());
            }
        }
        Command::Ablate {
            common,
            seed,
            axis,
            values,
            out,
        } => {
            let cfg = load_config(&common, overrides, None)?;
            let axis: AblationAxis = axis.parse().map_err(|e: mlrf::Error| e.in_stage("config"))?;
            let table = run_ablation_suite(&cfg, axis, &values, &seed, &common.runs_root, &mut StageCache::new())
                .map_err(|e| e.in_stage("ablate"))?;
            print!("{}", table.to_table());
            for cell in table.cells.iter().filter(|c| c.error.is_some()) {
                eprintln!(
                    "failed cell {}={} seed {}: {}",
                    axis.key(),
                    cell.value,
                    cell.seed,
                    cell.error.as_deref().unwrap_or_default()
                );
            }
            let path = out.unwrap_or_else(|| common.runs_root.join(format!("ablation-{}.json", axis.key())));
            write_text(&path, &table.to_json()?)?;
            println!("table: {}", path.display());
            if table.rows.iter().all(|r| r.median_ccc.is_none()) {
                bail!("stage `ablate` failed: every cell failed");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let mut args: Vec<String> = std::env::args().collect();
    let program = args.remove(0);
    let result = split_overrides(args).and_then(|(known, overrides)| {
        let cli = Cli::try_parse_from(std::iter::once(program).chain(known)).unwrap_or_else(|e| e.exit());
        execute(cli, &overrides)
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
