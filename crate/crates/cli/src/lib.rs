//! Command-line front end for the `airfunc` crate: configuration loading,
//! command dispatch and report rendering.

pub mod commands;
pub mod config;
pub mod report;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad input: configuration, arguments, files. Exit code 1.
    #[error("{0}")]
    Validation(String),
    /// A failure while running a valid configuration. Exit code 2.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<airfunc::Error> for CliError {
    fn from(e: airfunc::Error) -> Self {
        match e {
            airfunc::Error::PeakPower { .. } => CliError::Runtime(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}
