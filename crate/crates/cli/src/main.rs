use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod config;

/// Gaze regression from EEG: data generation, training, distillation,
/// evaluation and benchmarking.
#[derive(Debug, Parser)]
#[command(name = "eegmobile", version)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML file with [student], [teacher], [kd], [split], [synthetic] and [bench] sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one config value, e.g. `--set kd.lr=5e-4`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Directory for checkpoints, logs, reports and the resolved config.
    #[arg(long, default_value = ".", global = true)]
    pub out_dir: PathBuf,
    /// Start from the small desk-scale model configurations.
    #[arg(long, global = true)]
    pub tiny: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic EEGT dataset.
    GenData {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        channels: Option<usize>,
        #[arg(long)]
        timesteps: Option<usize>,
        /// Output path; defaults to `<out-dir>/data.eegt`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the teacher on the true loss only.
    TrainTeacher {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Train the student with the distillation loss.
    Distill {
        #[arg(long)]
        data: PathBuf,
        /// Teacher checkpoint; needed unless lambda is 0.
        #[arg(long)]
        teacher: Option<PathBuf>,
        #[arg(long)]
        lambda: Option<f32>,
        #[arg(long)]
        temperature: Option<f32>,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Distance of a checkpoint's predictions on one split.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = Part::Test)]
        split: Part,
    },
    /// Parameter breakdown of the configured architecture.
    Params {
        #[arg(long, value_enum)]
        arch: ArchArg,
    },
    /// Time full inference sweeps and write one report per model.
    Bench {
        #[arg(long = "model", required = true)]
        models: Vec<PathBuf>,
        /// Evaluation data; synthetic data shaped for the model otherwise.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        passes: Option<usize>,
        #[arg(long)]
        runs: Option<usize>,
    },
}

#[derive(Debug, Args)]
pub struct TrainFlags {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Part {
    Train,
    Val,
    Test,
    All,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ArchArg {
    Student,
    Teacher,
}

/// Bad flags, unknown config keys or out-of-range settings.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    let usage = err.is::<UsageError>()
        || matches!(
            err.downcast_ref::<eegmobile::Error>(),
            Some(eegmobile::Error::Config(_))
        );
    if usage {
        1
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
