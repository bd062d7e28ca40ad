//! `sparse-select`: extremal profiles, detection boundaries and Monte Carlo
//! risk experiments for sparse additive variable selection.
//!
//! Exit codes: 0 success, 1 usage, 2 domain error, 3 I/O.

mod commands;
mod error;
mod output;

use std::io::Write;
use std::process::ExitCode;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use crate::commands::{BoundaryArgs, ExtremalArgs, LowerBoundArgs, SimulateArgs, SweepArgs, TailsArgs};
use crate::error::CliError;

/// Caps the worker threads used for replications.
const THREADS_VAR: &str = "SPARSE_SELECT_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "sparse-select",
    version,
    about = "Variable selection experiments in sparse additive models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the extreme problem and print the extremal profile.
    Extremal(ExtremalArgs),
    /// Detection boundary and selector threshold.
    Boundary(BoundaryArgs),
    /// Risk over a list of signal radii, written as CSV.
    Sweep(SweepArgs),
    /// One Monte Carlo risk estimate.
    Simulate(SimulateArgs),
    /// Simulated Bayes lower bound on the normalized risk.
    LowerBound(LowerBoundArgs),
    /// Null lower-tail probabilities of the selection statistic.
    Tails(TailsArgs),
}

fn parse_threads(raw: &str) -> Result<usize, CliError> {
    raw.trim()
        .parse()
        .ok()
        .filter(|n| *n >= 1)
        .ok_or_else(|| CliError::Usage(format!("{THREADS_VAR} must be a positive integer, got {raw:?}")))
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n = parse_threads(&raw)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot configure {n} worker threads: {e}")))
}

/// Run a parsed command. Returns the document for stdout when no output
/// file was requested.
fn execute(cli: &Cli) -> Result<Option<Vec<u8>>, CliError> {
    let start = Instant::now();
    let (artifact, out) = match &cli.command {
        Command::Extremal(a) => (commands::extremal(a)?, a.out.as_deref()),
        Command::Boundary(a) => (commands::boundary(a)?, a.out.as_deref()),
        Command::Sweep(a) => (commands::sweep(a)?, Some(a.out.as_path())),
        Command::Simulate(a) => (commands::simulate(a)?, a.out.as_deref()),
        Command::LowerBound(a) => (commands::lower_bound(a)?, a.out.as_deref()),
        Command::Tails(a) => (commands::tails(a)?, a.out.as_deref()),
    };
    match out {
        Some(path) => output::persist(&artifact, path, start.elapsed()).map(|_| None),
        None => Ok(Some(artifact.bytes)),
    }
}

fn parse_failure_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(parse_failure_code(e.kind()));
        }
    };
    let result = configure_threads().and_then(|_| execute(&cli)).and_then(|doc| {
        let Some(bytes) = doc else { return Ok(()) };
        let mut stdout = std::io::stdout().lock();
        stdout
            .write_all(&bytes)
            .and_then(|_| stdout.flush())
            .map_err(|source| CliError::Io {
                context: "writing to stdout".into(),
                source,
            })
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
