//! Experiment runner for flow-assisted MCMC.
//!
//! `flowmc run` trains a flow alongside the walkers and writes chains,
//! metrics, evidence estimates and the trained flow. `flowmc evidence`
//! re-evaluates the evidence of a saved flow.

pub mod config;
pub mod experiment;
pub mod output;
pub mod run;

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("run aborted: {0}")]
    Aborted(String),
    #[error("I/O error on {}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Core(#[from] flowmc::Error),
}

impl CliError {
    /// 2 for configuration problems, 3 for a training abort, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Aborted(_) => 3,
            CliError::Io { .. } | CliError::Core(_) => 1,
        }
    }
}
