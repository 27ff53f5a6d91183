//! `rarexact` command-line front end.

mod commands;
mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "rarexact", version, about = "Exact tests and CMDP design for two-arm response-adaptive trials")]
struct Cli {
    /// Worker threads; defaults to all cores. Results do not depend on it.
    #[arg(long, global = true, env = "RAREXACT_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
pub struct Io {
    /// JSON run configuration.
    #[arg(long, short)]
    config: PathBuf,
    /// Output file; `-` writes text artifacts to stdout.
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Compute path coefficients of the configured policy and write the weight file.
    Design(Io),
    /// Build the configured tests and write their critical values as JSON.
    Crit {
        #[command(flatten)]
        io: Io,
        /// Reuse a weight file from `design` instead of recomputing.
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Rejection rate and patient benefit over the θ grid, as CSV.
    Oc {
        #[command(flatten)]
        io: Io,
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Evaluate the rules in a `crit` file instead of building them.
        #[arg(long)]
        rules: Option<PathBuf>,
    },
    /// Rejection rate and patient benefit of `policy` minus `baseline`, as CSV.
    PowerDiff(Io),
    /// Constrained design.
    Cmdp {
        #[command(subcommand)]
        action: CmdpAction,
    },
    /// Monte Carlo.
    Mc {
        #[command(subcommand)]
        action: McAction,
    },
    /// Simulated running proportion on control, as CSV.
    Paths(Io),
}

#[derive(Subcommand)]
enum CmdpAction {
    /// Solve the CMDP; writes the allocation table to `--out` and the audit to `--audit`.
    Solve {
        #[command(flatten)]
        io: Io,
        #[arg(long)]
        audit: PathBuf,
    },
}

#[derive(Subcommand)]
enum McAction {
    /// Re-randomization Wald test rejection rates with 95% intervals, as CSV.
    Randtest(Io),
}

/// A failure with its exit code.
#[derive(Debug)]
pub struct CliError {
    code: u8,
    kind: &'static str,
    message: String,
}

impl CliError {
    pub fn config(m: impl Into<String>) -> Self {
        CliError { code: 2, kind: "config", message: m.into() }
    }

    pub fn format(m: impl Into<String>) -> Self {
        CliError { code: 5, kind: "format", message: m.into() }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError { code: 5, kind: "io", message: format!("{}: {e}", path.display()) }
    }
}

impl From<rarexact::Error> for CliError {
    fn from(e: rarexact::Error) -> Self {
        use rarexact::Error::*;
        let (code, kind) = match &e {
            Domain(_) | Inadmissible(_) | Config(_) => (2, "config"),
            Infeasible(_) => (3, "infeasible"),
            Numeric(_) => (4, "numeric"),
            Format(_) => (5, "format"),
            Io(_) => (5, "io"),
        };
        CliError { code, kind, message: e.to_string() }
    }
}

#[derive(Serialize)]
struct ErrorLine<'a> {
    error: &'a str,
    code: u8,
    message: &'a str,
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::config(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Design(io) => commands::design(&io),
        Command::Crit { io, weights } => commands::crit(&io, weights.as_deref()),
        Command::Oc { io, weights, rules } => commands::oc(&io, weights.as_deref(), rules.as_deref()),
        Command::PowerDiff(io) => commands::power_diff(&io),
        Command::Cmdp { action: CmdpAction::Solve { io, audit } } => commands::cmdp_solve(&io, &audit),
        Command::Mc { action: McAction::Randtest(io) } => commands::randtest(&io),
        Command::Paths(io) => commands::paths(&io),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = ErrorLine { error: e.kind, code: e.code, message: &e.message };
            eprintln!("{}", serde_json::to_string(&line).expect("error line serializes"));
            ExitCode::from(e.code)
        }
    }
}
