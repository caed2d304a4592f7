//! Experiment runner for the asynchronous decentralized SCA simulator.
//!
//! `dsca run` executes one TOML config, `dsca sweep` a Cartesian grid over
//! it, and `dsca validate` the built-in invariant suite.

use std::path::PathBuf;

use dsca_core::metrics::ReferenceError;
use thiserror::Error;

pub mod config;
pub mod output;
pub mod runner;
pub mod sweep;
pub mod validate;

pub use config::ExperimentConfig;
pub use runner::{execute, Outcome, Overrides, RunArtifacts};

/// Environment variable overriding the output directory.
pub const OUT_DIR_ENV: &str = "DSCA_OUT_DIR";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("invariant breach: {0}")]
    Invariant(String),
    #[error("reference solver failed: {0}")]
    Reference(#[from] ReferenceError),
    #[error("cannot write {}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Io { .. } => 1,
            CliError::Config(_) => 2,
            CliError::Invariant(_) => 3,
            CliError::Reference(_) => 4,
        }
    }
}
