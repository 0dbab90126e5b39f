//! Error classes mapped one-to-one onto process exit codes:
//! 2 bad flags, 3 I/O, 4 format or shape mismatch, 5 numerical failure.

use p2mam_core::{CorpusError, LossError, ModelError, OptimError};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Flags(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Format(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Flags(_) => 2,
            CliError::Io(_) => 3,
            CliError::Format(_) => 4,
            CliError::Numeric(_) => 5,
        }
    }

    pub fn flags(msg: impl Into<String>) -> Self {
        CliError::Flags(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        CliError::Format(msg.into())
    }

    pub fn io_at(path: &std::path::Path, err: std::io::Error) -> Self {
        CliError::Io(format!("{}: {}", path.display(), err))
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        CliError::Format(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Format(e.to_string())
    }
}

impl From<OptimError> for CliError {
    fn from(e: OptimError) -> Self {
        CliError::Numeric(e.to_string())
    }
}

impl From<LossError> for CliError {
    fn from(e: LossError) -> Self {
        CliError::Numeric(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
