//! `convmambanet`: the seizure-detection pipeline as subcommands.
//!
//! Exit status is 0 on success, 1 when a command fails at run time and 2
//! for usage errors (bad flags, missing inputs, invalid configuration).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use convmambanet::dataset::SplitMode;

#[derive(Parser, Debug)]
#[command(name = "convmambanet", version, about = "CNN + selective state-space seizure detector")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug)]
pub struct Common {
    /// TOML run configuration; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed of every random stream in the run.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Start from the small model (64-sample windows, d_model 4) before
    /// applying the config file.
    #[arg(long, global = true)]
    pub reduced: bool,
    /// Worker threads for pure data-parallel stages; results do not depend
    /// on it.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Window and label a directory tree of EDF recordings.
    Preprocess {
        #[arg(long)]
        data_dir: PathBuf,
        /// Extra seizure intervals as `file,start_s,end_s` CSV.
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long)]
        window_s: Option<f64>,
        #[arg(long)]
        stride_s: Option<f64>,
        #[arg(long)]
        sample_rate: Option<f64>,
        #[arg(long)]
        overlap_threshold: Option<f64>,
    },
    /// Train/test split of a window store.
    Split {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<SplitArg>,
        #[arg(long)]
        test_fraction: Option<f64>,
    },
    /// Train from scratch; validates on the split's test side when given.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        split: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Metrics, ROC and confusion matrix of a checkpoint.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Evaluate the split's test side instead of every window.
        #[arg(long)]
        split: Option<PathBuf>,
    },
    /// Finite-difference gradient suite over every op and the model.
    Gradcheck {
        #[arg(long, default_value_t = 5)]
        seeds: u64,
    },
    /// Per-epoch timing against a dense baseline, plus scan scaling.
    Bench {
        #[arg(long)]
        repetitions: Option<usize>,
        #[arg(long)]
        n_windows: Option<usize>,
        #[arg(long)]
        scan_len: Option<usize>,
    },
    /// Write the separable synthetic dataset.
    Synth {
        #[arg(long)]
        n_windows: Option<usize>,
    },
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
pub enum SplitArg {
    WindowStratified,
    RecordGrouped,
}

impl From<SplitArg> for SplitMode {
    fn from(a: SplitArg) -> Self {
        match a {
            SplitArg::WindowStratified => SplitMode::WindowStratified,
            SplitArg::RecordGrouped => SplitMode::RecordGrouped,
        }
    }
}

/// Failure classes mapped onto exit codes.
#[derive(Debug)]
pub enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.into())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("usage error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
