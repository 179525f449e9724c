//! `stance`: batch driver for rumour stance experiments.
//!
//! Exit codes: 0 success, 2 input or configuration error, 3 I/O error,
//! 4 refusing to overwrite existing artifacts (pass `--overwrite`).

mod artifacts;
mod commands;
mod config;
mod error;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rumour_stance::Split;

use crate::config::ExperimentConfig;
use crate::error::CliError;

#[derive(Parser)]
#[command(name = "stance", version, about = "Feature-augmented rumour stance classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config (TOML).
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set mlp.epochs=10`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Replace existing artifacts instead of refusing.
    #[arg(long)]
    overwrite: bool,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig, CliError> {
        ExperimentConfig::load(self.config.as_deref(), &self.overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Convert a raw RumourEval directory into canonical JSONL.
    Convert {
        raw: PathBuf,
        out: PathBuf,
        #[arg(long)]
        split: Split,
        #[arg(long)]
        overwrite: bool,
    },
    /// Fit TF-IDF and train the feature MLP.
    TrainMlp(ConfigArgs),
    /// Train the fusion model once per seed and keep the best on dev.
    TrainEnsemble {
        #[command(flatten)]
        args: ConfigArgs,
        /// Seeds trained concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Score a stored model on a split and write its report.
    Evaluate {
        #[command(flatten)]
        args: ConfigArgs,
        #[arg(long)]
        split: Split,
        /// Model file (defaults to the chosen ensemble model, or the MLP with --mlp).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Evaluate the standalone MLP instead of the ensemble.
        #[arg(long)]
        mlp: bool,
    },
    /// Print a stored evaluation report.
    Report {
        #[command(flatten)]
        args: ConfigArgs,
        #[arg(long)]
        split: Split,
        #[arg(long)]
        mlp: bool,
        /// Print JSON instead of the table.
        #[arg(long)]
        json: bool,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Convert { raw, out, split, overwrite } => commands::convert(&raw, &out, split, overwrite),
        Command::TrainMlp(args) => commands::train_mlp_cmd(&args.load()?, args.overwrite),
        Command::TrainEnsemble { args, jobs } => commands::train_ensemble_cmd(&args.load()?, args.overwrite, jobs),
        Command::Evaluate { args, split, model, mlp } => {
            commands::evaluate(&args.load()?, split, model.as_deref(), mlp, args.overwrite)
        }
        Command::Report { args, split, mlp, json } => commands::report(&args.load()?, split, mlp, json),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
