//! `mpsauth`: generate data, train detector chains, run the protocol and
//! evaluate it, all from one experiment config.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mpsauth::he::BackendKind;

use crate::commands::{Failure, Run};
use crate::config::ExperimentConfig;

#[derive(Debug, Parser)]
#[command(name = "mpsauth", version, about = "Privacy-preserving continuous authentication experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Parent of the run directories.
    #[arg(long, global = true, default_value = "runs")]
    out_dir: PathBuf,
    /// HE backend, overriding `he.backend`.
    #[arg(long, global = true)]
    backend: Option<BackendKind>,
    /// Seed, overriding `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Write a synthetic dataset into the run directory.
    Generate,
    /// Train one detector chain per source and save the model bundle.
    Train,
    /// Run the protocol over every test user and record risk reports.
    Simulate,
    /// Compute the window-size EER grid and the slice table.
    Evaluate,
    /// Time both backends on a few test slices.
    Bench,
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path).map_err(Failure::User)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(backend) = cli.backend {
        cfg.he.backend = backend;
    }
    let run = Run::open(cfg, &cli.out_dir)?;
    match cli.command {
        Command::Generate => commands::generate(&run),
        Command::Train => commands::train(&run),
        Command::Simulate => commands::simulate(&run),
        Command::Evaluate => commands::evaluate(&run),
        Command::Bench => commands::bench(&run),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::User(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Internal(e)) => {
            eprintln!("internal error: {e:#}");
            ExitCode::from(2)
        }
    }
}
