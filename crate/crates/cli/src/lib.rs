//! Command-line front end: flat `key = value` configuration and one function
//! per subcommand.

pub mod commands;
pub mod config;

use voxtend_core::Error;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad configuration or missing inputs, detected before any output is written.
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
            CliError::Diverged { .. } => 3,
        }
    }

    pub fn runtime(e: Error) -> Self {
        match e {
            Error::TrainingDiverged { epoch, loss } => CliError::Diverged { epoch, loss },
            other => CliError::Runtime(other.to_string()),
        }
    }
}
