//! Command-line front end: configuration files, training, evaluation,
//! transfer checks and curve export.

pub mod commands;
pub mod config;
pub mod curves;
pub mod settings;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("runtime failure: {0}")]
    Runtime(String),
}

impl CliError {
    /// 2 for bad input, 3 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}
