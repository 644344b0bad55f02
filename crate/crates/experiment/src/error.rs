use std::path::PathBuf;

use ladder_core::Error as CoreError;

/// Failures of a pipeline command, grouped by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("missing input {path}: {reason}")]
    MissingInput { path: PathBuf, reason: String },
    #[error("{0}")]
    Capacity(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::MissingInput { .. } => 3,
            CliError::Capacity(_) => 4,
            CliError::Numerical(_) => 5,
            CliError::Io { .. } => 1,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::InvalidInput(_) | CoreError::DimensionMismatch { .. } => {
                CliError::Config(e.to_string())
            }
            CoreError::Capacity { .. } => CliError::Capacity(e.to_string()),
            CoreError::Format(_) => CliError::MissingInput {
                path: PathBuf::new(),
                reason: e.to_string(),
            },
            CoreError::Io(io) => CliError::io(PathBuf::new(), io),
            CoreError::Resolution { .. }
            | CoreError::Aliasing { .. }
            | CoreError::UnreliableFit(_)
            | CoreError::Numerical(_) => CliError::Numerical(e.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
