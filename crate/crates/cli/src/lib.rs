//! Command-line front end: configuration, command dispatch and reports.

use thiserror::Error;

pub mod commands;
pub mod config;
pub mod output;

pub use commands::{execute, run, Cli, CommandKind, Format, Outcome};
pub use config::{parse_config, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error(transparent)]
    Core(#[from] elmd::Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot write report: {0}")]
    Output(String),
    #[error("{0}")]
    Unsupported(String),
}

impl CliError {
    /// 1 for infeasible markets, 2 for everything the user has to fix.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Core(elmd::Error::Infeasible { .. } | elmd::Error::MarginViolated { .. }) => 1,
            _ => 2,
        }
    }
}
