use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = FitError> = std::result::Result<T, E>;

/// Errors of the IO layer and the command line.
#[derive(Debug, Error)]
pub enum FitError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: bad magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic { path: PathBuf, expected: u32, found: u32 },

    #[error("{path}: truncated file, expected {expected} bytes, found {actual}")]
    Truncated { path: PathBuf, expected: u64, actual: u64 },

    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("{source_name}:{line}: {field}: {msg}")]
    Parse {
        source_name: String,
        line: usize,
        field: String,
        msg: String,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] fitnets_core::Error),

    #[error("verification failed: {0}")]
    Verification(String),
}

impl FitError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FitError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(source_name: &str, line: usize, field: &str, msg: impl Into<String>) -> Self {
        FitError::Parse {
            source_name: source_name.to_string(),
            line,
            field: field.to_string(),
            msg: msg.into(),
        }
    }

    /// Process exit code: 1 when training or verification failed, 2 for
    /// usage, configuration and input problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            FitError::Verification(_) => 1,
            FitError::Core(e) => match e {
                fitnets_core::Error::Diverged { .. } => 1,
                _ => 2,
            },
            _ => 2,
        }
    }
}
