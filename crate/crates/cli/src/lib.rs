//! `gridptr` command-line driver.
//!
//! Exit codes: 0 success, 2 usage or path problems, 3 numeric failure,
//! 1 any other runtime failure (for example an unwritable output).

mod commands;
pub mod config;
pub mod viz;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use gridptr::model::StackMode;

pub use config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Bad flags, configs or paths; reported with exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Parser)]
#[command(name = "gridptr", version, about = "Scene-text VQA with grid features and a cell pointer")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub grid_size: Option<usize>,
    #[arg(long, global = true, value_parser = parse_stack)]
    pub stack: Option<StackMode>,
    /// Zero similarities below this value when scoring.
    #[arg(long, global = true)]
    pub anls_threshold: Option<f64>,
    /// Classifier predictions (JSON lines) for ensemble evaluation.
    #[arg(long, global = true)]
    pub ensemble_preds: Option<PathBuf>,
    #[arg(long, global = true)]
    pub ensemble_tau: Option<f64>,
    /// Only warnings and errors on stderr; no summary on stdout.
    #[arg(long, short, global = true)]
    pub quiet: bool,
}

fn parse_stack(s: &str) -> Result<StackMode, String> {
    s.parse().map_err(|e: gridptr::Error| e.to_string())
}

#[derive(Debug, Args, Default)]
pub struct DataArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Filter, train, and write checkpoints plus a training log.
    Train {
        #[command(flatten)]
        data: DataArgs,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Score a checkpoint (or a predictions file) and write a JSON report.
    Eval {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Score these predictions instead of running a checkpoint.
        #[arg(long, conflicts_with = "checkpoint")]
        predictions: Option<PathBuf>,
        /// Report path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write one prediction per question as JSON lines.
    Predict {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render the attention map of one question as a PGM image.
    Viz {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Defaults to the first question of the dataset.
        #[arg(long)]
        question_id: Option<String>,
        #[arg(long)]
        out: PathBuf,
        /// Also write a plain-text P2 copy next to `out`.
        #[arg(long)]
        ascii: bool,
    },
    /// Generate a synthetic dataset and feature file.
    Synth {
        #[arg(long, default_value_t = 200)]
        count: usize,
        /// Additional grid sizes to store features for.
        #[arg(long, value_delimiter = ',')]
        extra_grids: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Answer recall and ANLS upper bound of the OCR tokens of a dataset.
    Analyze {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Maps an error to its exit code.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.downcast_ref::<UsageError>().is_some() {
        return EXIT_USAGE;
    }
    match err.downcast_ref::<gridptr::Error>() {
        Some(gridptr::Error::Numeric(_)) => EXIT_NUMERIC,
        Some(gridptr::Error::Io(_)) => EXIT_FAILURE,
        Some(_) => EXIT_USAGE,
        None => EXIT_FAILURE,
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let level = if cli.global.quiet { "warn" } else { "info" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
    match commands::dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}
