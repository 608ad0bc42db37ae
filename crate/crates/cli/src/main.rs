//! `extarm`: audit external sources, estimate treatment effects against a
//! constructed control arm, simulate from a structural causal model, and
//! run replicate studies.

mod commands;
mod config;
mod pipeline;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use commands::{Options, Outcome};
use pipeline::{Stage, StageExt};

#[derive(Parser)]
#[command(name = "extarm", version, about = "External control arms for master-protocol trials")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit-for-use scores for every external source.
    Audit(Flags),
    /// Full analysis: ingest, fitness, control arm, diagnostics, estimates,
    /// sensitivity.
    Estimate(Flags),
    /// Generate a dataset and its truth sidecar.
    Simulate(Flags),
    /// Operating characteristics over seeded replicates.
    Replicate(Flags),
}

#[derive(clap::Args)]
struct Flags {
    /// Run configuration (.toml or .json).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Report path (dataset path for `simulate`); overrides `output`.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Worker threads; `replicate` defaults to all cores, everything else
    /// to one.
    #[arg(long, value_name = "N")]
    threads: Option<usize>,
}

fn emit(outcome: Outcome) -> anyhow::Result<()> {
    match &outcome.path {
        Some(path) => {
            std::fs::write(path, &outcome.json)
                .with_context(|| format!("cannot write {}", path.display()))
                .stage(Stage::Output)?;
            print!("{}", outcome.summary);
        }
        None => {
            print!("{}", outcome.json);
            eprint!("{}", outcome.summary);
        }
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let (flags, parallel) = match &cli.command {
        Command::Replicate(f) => (f, true),
        Command::Audit(f) | Command::Estimate(f) | Command::Simulate(f) => (f, false),
    };
    let threads = flags.threads.or((!parallel).then_some(1));
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("cannot start the thread pool")?;
    }
    let opts = Options { config: flags.config.clone(), seed: flags.seed, out: flags.out.clone() };
    let outcome = match cli.command {
        Command::Audit(_) => commands::audit(&opts)?,
        Command::Estimate(_) => commands::estimate(&opts)?,
        Command::Simulate(_) => commands::simulate(&opts)?,
        Command::Replicate(_) => commands::replicate(&opts)?,
    };
    emit(outcome)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
