use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = ElqError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum ElqError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: malformed record: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("duplicate entity id {id:?} on line {line}")]
    DuplicateId { id: String, line: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("index {index} out of range (len {len})")]
    OutOfRange { index: usize, len: usize },

    #[error("invalid file format: {0}")]
    Format(String),

    #[error("unsupported {kind} version {found} (expected {expected})")]
    Version {
        kind: &'static str,
        found: u32,
        expected: u32,
    },

    #[error("unknown id {0:?}")]
    UnknownId(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

impl ElqError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ElqError::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable category, used for CLI exit reporting.
    pub fn category(&self) -> &'static str {
        match self {
            ElqError::Io { .. } => "io",
            ElqError::Malformed { .. } | ElqError::Format(_) => "format",
            ElqError::Version { .. } => "version",
            ElqError::DimensionMismatch(_) => "dimension",
            ElqError::DuplicateId { .. } | ElqError::UnknownId(_) => "identity",
            ElqError::NonFinite(_) => "numeric",
            ElqError::OutOfRange { .. } | ElqError::Empty(_) | ElqError::InvalidInput(_) => {
                "input"
            }
        }
    }
}
