//! Command-line driver for the weak-critical-point experiments.

mod blowup;
mod check;
mod config;
mod continuation;
mod output;
mod sweep;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "weakcrit", version, about = "Weak critical points of the regularized N-body action")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON config for the subcommand; built-in defaults apply when omitted.
    #[arg(long, global = true, env = "WEAKCRIT_CONFIG")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, env = "WEAKCRIT_OUT", default_value = "out")]
    out: PathBuf,
    /// Overrides the RNG seed of the config.
    #[arg(long, global = true, env = "WEAKCRIT_SEED")]
    seed: Option<u64>,
    /// Worker threads for independent grid points (0 = all cores).
    #[arg(long, global = true, env = "WEAKCRIT_WORKERS", default_value_t = 1)]
    workers: usize,
    /// Deliberately break a computation (testing only).
    #[arg(long, global = true, env = "WEAKCRIT_FAULT_INJECT", hide = true)]
    fault_inject: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Finite-difference and identity checks of the potential, paths and action.
    Check,
    /// Eps continuation to a weak critical sequence.
    Continuation,
    /// Asymptotic angles and transverse index counts of the limit problems.
    LimitSweep,
    /// Blow-up profiles, directions and rescaled forms of a stored sequence.
    Blowup {
        /// Stored sequence.json; overrides the config entry.
        #[arg(long)]
        sequence: Option<PathBuf>,
    },
}

/// Outcome of a subcommand: usage errors exit 2, scientific failures exit 1.
pub enum Failure {
    Usage(String),
    Science(String),
}

impl From<weakcrit::Error> for Failure {
    fn from(e: weakcrit::Error) -> Self {
        use weakcrit::Error::*;
        match e {
            InvalidSystem(_) | InvalidInput(_) | DomainError(_) | GridMismatch(_) | EndpointNotCentered { .. } | CollisionConfiguration { .. } => {
                Failure::Usage(e.to_string())
            }
            _ => Failure::Science(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

pub struct Context {
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub fault: Option<String>,
    pub pool: rayon::ThreadPool,
}

fn run(cli: Cli) -> Result<(), Failure> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cli.workers).build().map_err(|e| Failure::Usage(e.to_string()))?;
    let ctx = Context { out: cli.out, seed: cli.seed, fault: cli.fault_inject, pool };
    let cfg = cli.config.as_deref();
    match cli.command {
        Command::Check => check::run(&ctx, config::load(cfg)?),
        Command::Continuation => continuation::run(&ctx, config::load(cfg)?),
        Command::LimitSweep => sweep::run(&ctx, config::load(cfg)?),
        Command::Blowup { sequence } => {
            let mut c: config::BlowupConfig = config::load(cfg)?;
            if let Some(s) = sequence {
                c.sequence = s;
            }
            blowup::run(&ctx, c)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Science(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(2)
        }
    }
}
