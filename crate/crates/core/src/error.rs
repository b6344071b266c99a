use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("index {index} out of range for length {len}")]
    Index { index: usize, len: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value in {context}")]
    Numeric { context: String },

    #[error("{units} independent mask units exceed the enumeration limit of {limit}")]
    Capacity { units: usize, limit: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("singular system: {0}")]
    Rank(String),

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("inconsistent data: {0}")]
    Consistency(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn numeric(context: impl Into<String>) -> Self {
        Error::Numeric {
            context: context.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
