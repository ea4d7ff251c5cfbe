//! Experiment runner: config parsing, the CLI verbs and their artifacts.

use std::fmt::Display;

pub mod artifacts;
pub mod commands;
pub mod config;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad config, usage or input data.
    #[error("{0}")]
    Invalid(String),
    #[error("{stage}: {message}")]
    Runtime {
        stage: &'static str,
        message: String,
    },
}

impl CliError {
    pub fn runtime(stage: &'static str, e: impl Display) -> Self {
        CliError::Runtime {
            stage,
            message: e.to_string(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => 2,
            CliError::Runtime { .. } => 1,
        }
    }
}
