//! Command-line pipeline: `prepare | synth | train | evaluate | ensemble | sweep`.
//!
//! Every command reads the same experiment config (defaults, then a TOML or
//! JSON file, then `--set key=value` and dedicated flags) and works inside
//! one run directory under the output root.

mod commands;
mod config;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde_json::{json, Value};
use thiserror::Error;

pub use commands::*;
pub use config::*;

use crate::dataset::DatasetError;
use crate::ensemble::EnsembleError;
use crate::metrics::MetricsError;
use crate::model::ModelError;
use crate::retrieval::RetrievalError;
use crate::synth::SynthError;
use crate::trainer::{LossError, TrainError};

pub const OUTPUT_ROOT_ENV: &str = "ENSREC_OUTPUT_ROOT";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    /// 2 usage/config, 3 data, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }

    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Config(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::InvalidConfig(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<RetrievalError> for CliError {
    fn from(e: RetrievalError) -> Self {
        match e {
            RetrievalError::NonFinite => CliError::Numerical(e.to_string()),
            RetrievalError::Model(m) => m.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) | TrainError::Loss(LossError::BadTemperature(_)) => CliError::Config(e.to_string()),
            TrainError::Diverged { .. } | TrainError::Loss(_) => CliError::Numerical(e.to_string()),
            TrainError::Model(m) => m.into(),
            TrainError::Retrieval(r) => r.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<EnsembleError> for CliError {
    fn from(e: EnsembleError) -> Self {
        match e {
            EnsembleError::BadAlpha(_) | EnsembleError::BadTau(_) | EnsembleError::EmptyGrid => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "ensrec", version, about = "ID/text sequential recommendation: training, complementarity and ensembling")]
pub struct Cli {
    /// Experiment config (TOML, or JSON with a .json extension).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override any config key, e.g. `--set train.max_epochs=5`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Root under which relative run directories are created.
    #[arg(long, env = OUTPUT_ROOT_ENV, default_value = ".", global = true)]
    pub output_root: PathBuf,
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub trials: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the processed dataset and manifest from the dataset config.
    Prepare,
    /// Write a synthetic dataset with provenance labels.
    Synth {
        /// Target directory (default: `<run>/synth`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train every configured model for every trial seed.
    Train {
        /// Comma-separated subset of model names.
        #[arg(long, value_delimiter = ',')]
        models: Option<Vec<String>>,
        /// Continue from existing `last.ckpt` files.
        #[arg(long)]
        resume: bool,
        #[arg(long)]
        max_epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        patience: Option<usize>,
    },
    /// Test-split metrics per model; `--pairs` adds complementarity reports.
    Evaluate {
        #[arg(long)]
        pairs: bool,
    },
    /// Metrics of the (alpha, tau) score ensemble.
    Ensemble {
        #[arg(long)]
        alpha: Option<f64>,
        /// log10 of tau; omit for tau = infinity.
        #[arg(long, allow_hyphen_values = true)]
        log10_tau: Option<f64>,
    },
    /// Recall over the (alpha, log10 tau) grid on all splits.
    Sweep,
}

fn flag_overrides(cli: &Cli) -> Vec<Value> {
    let mut v = Vec::new();
    if let Some(d) = &cli.output_dir {
        v.push(json!({"output_dir": d}));
    }
    if let Some(s) = cli.seed {
        v.push(json!({"seed": s}));
    }
    if let Some(t) = cli.trials {
        v.push(json!({"trials": t}));
    }
    match &cli.command {
        Command::Train {
            max_epochs,
            learning_rate,
            batch_size,
            patience,
            ..
        } => {
            let mut t = serde_json::Map::new();
            if let Some(x) = max_epochs {
                t.insert("max_epochs".into(), json!(x));
            }
            if let Some(x) = learning_rate {
                t.insert("learning_rate".into(), json!(x));
            }
            if let Some(x) = batch_size {
                t.insert("batch_size".into(), json!(x));
            }
            if let Some(x) = patience {
                t.insert("patience".into(), json!(x));
            }
            v.push(json!({ "train": t }));
        }
        Command::Ensemble { alpha, log10_tau } => {
            if let Some(a) = alpha {
                v.push(json!({"ensemble": {"alpha": a}}));
            }
            if let Some(t) = log10_tau {
                v.push(json!({"ensemble": {"log10_tau": t}}));
            }
        }
        _ => {}
    }
    v
}

/// Parses and executes one command, returning its exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(summary) => {
            let _ = writeln!(std::io::stdout(), "{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs the parsed command and returns a short human summary.
pub fn execute(cli: &Cli) -> Result<String, CliError> {
    let mut overrides = cli
        .overrides
        .iter()
        .map(|s| parse_override(s))
        .collect::<Result<Vec<_>, _>>()?;
    overrides.extend(flag_overrides(cli));
    let config = load_config(cli.config.as_deref(), &overrides)?;
    let run = Run::open(config, &cli.output_root)?;
    let dir = run.dir.display().to_string();
    match &cli.command {
        Command::Prepare => {
            let m = cmd_prepare(&run)?;
            Ok(format!(
                "prepared {} users, {} items, {} interactions in {dir}",
                m.n_users, m.n_items, m.n_interactions
            ))
        }
        Command::Synth { out } => {
            let out = out.clone().unwrap_or_else(|| run.dir.join("synth"));
            cmd_synth(&run.config, &out)?;
            Ok(format!("wrote synthetic data to {}", out.display()))
        }
        Command::Train { models, resume, .. } => {
            let s = cmd_train(&run, models.as_deref(), *resume)?;
            let lines: Vec<String> = s
                .iter()
                .map(|t| format!("{} seed {}: best epoch {} val R@10 {:.5}", t.model, t.seed, t.best_epoch, t.best_val_recall))
                .collect();
            Ok(lines.join("\n"))
        }
        Command::Evaluate { pairs } => {
            cmd_evaluate(&run, *pairs)?;
            read_report(&run, if *pairs { &["metrics.txt", "pairs.txt"][..] } else { &["metrics.txt"][..] })
        }
        Command::Ensemble { .. } => {
            cmd_ensemble(&run)?;
            read_report(&run, &["ensemble.txt"])
        }
        Command::Sweep => {
            let s = cmd_sweep(&run)?;
            let lines: Vec<String> = s
                .iter()
                .flat_map(|r| {
                    r.summary.selections.iter().map(move |sel| {
                        format!(
                            "seed {} selected on {}: alpha {} log10_tau {} -> test R@{} {:.5}",
                            r.seed,
                            sel.selected_on,
                            sel.alpha,
                            sel.log10_tau,
                            r.summary.k,
                            sel.test_recall.unwrap_or(f64::NAN)
                        )
                    })
                })
                .collect();
            Ok(lines.join("\n"))
        }
    }
}

fn read_report(run: &Run, files: &[&str]) -> Result<String, CliError> {
    let mut out = String::new();
    for f in files {
        let p = run.reports_dir().join(f);
        out.push_str(&std::fs::read_to_string(&p).map_err(|e| CliError::io(&p, e))?);
    }
    Ok(out)
}
