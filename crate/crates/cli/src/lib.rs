//! Experiment runner behind the `ispec` binary.
//!
//! Each stage reads a JSON [`config::ExperimentConfig`], writes CSV tables and
//! a JSON verdict into the run directory and records both in `manifest.json`.
//! Stages later in the pipeline reload the artifacts of earlier ones instead
//! of recomputing them.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod presets;
mod table;

use std::fmt;

pub use commands::{run_stage, Command};

/// Failures of a CLI invocation, each with its process exit code.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Certificate(String),
    Convergence(String),
    MissingArtifact(String),
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Certificate(_) => 3,
            CliError::Convergence(_) => 4,
            CliError::MissingArtifact(_) => 5,
            CliError::Other(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Certificate(m) => write!(f, "certificate failed: {m}"),
            CliError::Convergence(m) => write!(f, "no convergence: {m}"),
            CliError::MissingArtifact(m) => write!(f, "missing artifact: {m}"),
            CliError::Other(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<ispec_core::Error> for CliError {
    fn from(e: ispec_core::Error) -> Self {
        use ispec_core::Error as E;
        match e {
            E::CertificateFailed { .. } => CliError::Certificate(e.to_string()),
            E::NoConvergence { .. } => CliError::Convergence(e.to_string()),
            E::InvalidProfile(_) | E::InvalidModulus(_) | E::InvalidGrid(_) => {
                CliError::Config(e.to_string())
            }
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(format!("i/o: {e}"))
    }
}

/// Caps the rayon pool at `ISPEC_THREADS` workers when the variable is set.
pub fn init_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("ISPEC_THREADS") else {
        return Ok(());
    };
    let n: usize = v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        CliError::Config(format!(
            "ISPEC_THREADS must be a positive integer, got {v:?}"
        ))
    })?;
    // a pool built earlier in the same process wins; that is fine
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
    Ok(())
}
