//! Experiment runner behind the `hyplab` binary: configuration, the
//! experiments themselves, and deterministic report writing.

pub mod config;
pub mod experiments;
pub mod report;

use hyplab_core::HypError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Config { line: Option<usize>, message: String },

    #[error("invalid config: {0}")]
    Validation(String),

    #[error("i/o error: {0}")]
    Io(String),

    #[error(transparent)]
    Compute(#[from] HypError),
}
