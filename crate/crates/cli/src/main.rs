//! `qsdlab`: quasi-stationary distributions from the command line.
//!
//! Exit codes: 0 success, 1 I/O or usage, 2 invalid input, 3 solver failure,
//! 4 no QSD at the requested parameter, 5 certificate outside tolerance.

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qsd_core::QsdError;

mod commands;
mod manifest;
mod model;

use model::Source;

#[derive(Parser, Debug)]
#[command(name = "qsdlab", version, about = "Quasi-stationary distributions of absorbed Markov chains")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Critical parameter, regime and existence evidence.
    Analyze {
        #[command(flatten)]
        src: Source,
        /// Decay parameter for the existence report (default: the critical one).
        #[arg(long)]
        lambda: Option<String>,
        /// Print JSON instead of the table.
        #[arg(long)]
        json: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute and certify a QSD.
    Qsd {
        #[command(flatten)]
        src: Source,
        /// Literal, `lcr` or `l0`.
        #[arg(long, conflicts_with = "minimal")]
        lambda: Option<String>,
        #[arg(long)]
        minimal: bool,
        /// perron, renewal, mu, martin:+ or martin:-.
        #[arg(long, default_value = "renewal")]
        method: String,
        /// Anchor state for renewal and mu.
        #[arg(long, allow_hyphen_values = true)]
        anchor: Option<i64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Critical parameter of the hub model over an alpha grid.
    Sweep {
        #[arg(long, default_value_t = 0.95)]
        q: f64,
        /// Explicit alpha values.
        #[arg(long, value_delimiter = ',', conflicts_with = "grid")]
        alphas: Vec<f64>,
        /// Uniform grid START:STOP:COUNT.
        #[arg(long)]
        grid: Option<String>,
        #[arg(long, value_delimiter = ',')]
        schedule: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo Yaglom estimate against the oracle.
    Yaglom {
        #[command(flatten)]
        src: Source,
        #[arg(long, default_value_t = 30)]
        n: usize,
        #[arg(long, default_value_t = 100_000)]
        paths: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
        start: i64,
        /// Average consecutive times (for periodic chains).
        #[arg(long)]
        parity: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Certify a supplied QSD table.
    Verify {
        #[command(flatten)]
        src: Source,
        /// CSV with columns state,weight.
        #[arg(long = "qsd")]
        qsd_file: PathBuf,
        #[arg(long)]
        lambda: String,
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
        #[arg(long, default_value_t = 30)]
        horizon: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Error with a fixed exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub msg: String,
}

impl Failure {
    pub fn validation(msg: impl Into<String>) -> Self {
        Failure { code: 2, msg: msg.into() }
    }

    pub fn no_qsd(msg: impl Into<String>) -> Self {
        Failure { code: 4, msg: msg.into() }
    }

    pub fn certificate(msg: impl Into<String>) -> Self {
        Failure { code: 5, msg: msg.into() }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.msg)
    }
}

impl std::error::Error for Failure {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(f) = err.downcast_ref::<Failure>() {
        return f.code;
    }
    match err.downcast_ref::<QsdError>() {
        Some(e) => match e {
            QsdError::RowSum { .. }
            | QsdError::BadEntry { .. }
            | QsdError::NoAbsorption
            | QsdError::Reducible { .. }
            | QsdError::EmptyWindow
            | QsdError::UnknownState(_)
            | QsdError::ParamRange(_)
            | QsdError::Spec(_)
            | QsdError::Precondition(_)
            | QsdError::NotSkipFree(_)
            | QsdError::Supercritical { .. } => 2,
            QsdError::RegimeMismatch(_) | QsdError::NoQsdAtLambda { .. } => 4,
            _ => 3,
        },
        None => 1,
    }
}

fn configure_threads() {
    if let Some(n) = std::env::var("QSDLAB_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    configure_threads();
    let res = match cli.cmd {
        Cmd::Analyze { src, lambda, json, out } => commands::analyze(&src, lambda.as_deref(), json, out.as_deref()),
        Cmd::Qsd { src, lambda, minimal, method, anchor, out } => {
            commands::qsd(&src, lambda.as_deref(), minimal, &method, anchor, out.as_deref())
        }
        Cmd::Sweep { q, alphas, grid, schedule, out } => commands::sweep(q, alphas, grid.as_deref(), schedule, out.as_deref()),
        Cmd::Yaglom { src, n, paths, seed, start, parity, out } => {
            commands::yaglom(&src, n, paths, seed, start, parity, out.as_deref())
        }
        Cmd::Verify { src, qsd_file, lambda, tol, horizon, out } => {
            commands::verify(&src, &qsd_file, &lambda, tol, horizon, out.as_deref())
        }
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("qsdlab: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
