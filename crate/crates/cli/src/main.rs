mod commands;
mod config;
mod io;
mod manifest;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::UsageError;

/// Anchor-word topic models with covariate effects on topic prevalence.
#[derive(Debug, Parser)]
#[command(name = "brett", version, about)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "BRETT_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Clean documents and write the term-document matrix and covariate design.
    Ingest(commands::ingest::Args),
    /// Select anchor words by successive projection.
    Anchors(commands::anchors::Args),
    /// Fit the separable factorization for fixed or selected anchors.
    Fit(commands::fit::Args),
    /// Regress topic prevalence on document covariates.
    Regress(commands::regress::Args),
    /// Run the Monte Carlo study comparing recalculated and fixed topic matrices.
    Simulate(commands::simulate::Args),
    /// Summarize a fitted model and, optionally, a coefficient table.
    Report(commands::report::Args),
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(config::usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::Ingest(a) => commands::ingest::run(a),
        Command::Anchors(a) => commands::anchors::run(a),
        Command::Fit(a) => commands::fit::run(a),
        Command::Regress(a) => commands::regress::run(a),
        Command::Simulate(a) => commands::simulate::run(a),
        Command::Report(a) => commands::report::run(a),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<brett_core::Error>() {
            return if e.is_validation() { 2 } else { 1 };
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
