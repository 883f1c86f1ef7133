//! `pinning`: solves, sweeps and checks for the homogenized pinning model.
//!
//! Exit codes: 0 success, 1 I/O, 2 validation, 3 non-convergence, 4 property-check failure.

mod commands;
mod config;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use config::RunConfig;

#[derive(Parser)]
#[command(name = "pinning", version, about = "Vortex pinning: dual solves, critical fields and lattice checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the dual problem, recover D and classify the multiplicity regions
    Dual(RunConfig),
    /// Critical-field ladder and phase diagram
    Critical(RunConfig),
    /// Degree minimization or recovery construction on an ε-lattice
    Micro(RunConfig),
    /// Micro minima against the homogenized minimum along an ε sweep
    GammaCheck(RunConfig),
    /// Randomized checks of Φ, Φ* and the cell problem
    OracleCheck(RunConfig),
}

/// A command failure with its exit code.
#[derive(Debug, Serialize)]
pub struct Failure {
    #[serde(skip)]
    pub code: u8,
    pub error: &'static str,
    pub message: String,
}

impl Failure {
    pub fn validation(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            error: "validation",
            message: message.into(),
        }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            error: "io",
            message: message.into(),
        }
    }

    pub fn convergence(message: impl Into<String>) -> Self {
        Self {
            code: 3,
            error: "non_convergence",
            message: message.into(),
        }
    }

    pub fn property(message: impl Into<String>) -> Self {
        Self {
            code: 4,
            error: "property_check",
            message: message.into(),
        }
    }
}

impl From<pinning_core::Error> for Failure {
    fn from(err: pinning_core::Error) -> Self {
        use pinning_core::Error as E;
        match err {
            E::NoConvergence { .. } => Self::convergence(err.to_string()),
            E::Io(_) | E::Json(_) => Self::io(err.to_string()),
            _ => Self::validation(err.to_string()),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Dual(cfg) => cfg.resolve().and_then(|c| commands::dual(&c)),
        Command::Critical(cfg) => cfg.resolve().and_then(|c| commands::critical(&c)),
        Command::Micro(cfg) => cfg.resolve().and_then(|c| commands::micro(&c)),
        Command::GammaCheck(cfg) => cfg.resolve().and_then(|c| commands::gamma_check(&c)),
        Command::OracleCheck(cfg) => cfg.resolve().and_then(|c| commands::oracle_check(&c)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            let json = serde_json::json!({
                "error": failure.error,
                "message": failure.message,
                "exit_code": failure.code,
            });
            eprintln!("{json}");
            ExitCode::from(failure.code)
        }
    }
}
