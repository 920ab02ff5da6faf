use thiserror::Error;

use crate::checkpoint::CheckpointError;
use crate::config::ExpandError;
use crate::featfile::FileError;
use haad::synthbench::BenchError;
use haad::training::TrainError;

/// Process exit codes.
pub const EXIT_OK: u8 = 0;
pub const EXIT_CHECK: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_IO: u8 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Check(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Check(_) => EXIT_CHECK,
            CliError::Io(_) => EXIT_IO,
        }
    }

    pub fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }
}

impl From<FileError> for CliError {
    fn from(e: FileError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<ExpandError> for CliError {
    fn from(e: ExpandError) -> Self {
        match e {
            ExpandError::Io { .. } => CliError::Io(e.to_string()),
            ExpandError::Config(c) => CliError::Usage(c.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) => CliError::Usage(e.to_string()),
            _ => CliError::Check(e.to_string()),
        }
    }
}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::Config(_) => CliError::Usage(e.to_string()),
            BenchError::Train(t) => t.into(),
            BenchError::Metric(_) => CliError::Check(e.to_string()),
        }
    }
}

impl From<haad::dynamics::DynError> for CliError {
    fn from(e: haad::dynamics::DynError) -> Self {
        match e {
            haad::dynamics::DynError::Config(_) => CliError::Usage(e.to_string()),
            _ => CliError::Check(e.to_string()),
        }
    }
}
