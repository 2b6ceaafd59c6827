//! `resgan`: train, degrade, restore, evaluate and benchmark.
//!
//! Exit status is 0 on success, 2 for configuration or input errors and 3
//! when training diverges.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] resgan_core::Error),
    #[error("{message}")]
    Diverged { message: String },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(resgan_core::Error::TrainingDiverged { .. }) | CliError::Diverged { .. } => 3,
            _ => 2,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

#[derive(Parser, Debug)]
#[command(name = "resgan", version, about = "Adversarial image restoration at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Run document in TOML.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output root; defaults to $RESGAN_OUT, then `runs`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one model and write metrics, checkpoints, an evaluation and grids.
    Train(Common),
    /// Write coarse versions of the dataset, or of one PGM/PPM image.
    Degrade {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Restore coarse images with a trained restoration checkpoint.
    Restore {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// IDX file of coarse images; the held-out split is used otherwise.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the held-out split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train every (kind, dataset) cell and write the loss/accuracy table.
    Bench(Common),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(c) => commands::train(&c),
        Command::Degrade { common, input } => commands::degrade(&common, input.as_deref()),
        Command::Restore { common, checkpoint, input } => commands::restore(&common, &checkpoint, input.as_deref()),
        Command::Eval { common, checkpoint } => commands::eval(&common, &checkpoint),
        Command::Bench(c) => commands::bench(&c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
