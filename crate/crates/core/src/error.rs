use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised anywhere in the pipeline.
///
/// Variants are grouped so that callers (the CLI in particular) can map them
/// onto coarse categories: bad input data, bad arguments, provider failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("no entry for key {0:?}")]
    Lookup(String),

    #[error("provider {provider} failed: {msg}")]
    Provider {
        provider: String,
        msg: String,
        retriable: bool,
    },

    #[error("could not parse generator reply: {msg}")]
    Extraction { msg: String, raw: String },

    #[error("training diverged at step {step}: {msg}")]
    Training { step: usize, msg: String },

    #[error("missing input {0}")]
    MissingInput(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn provider(provider: &str, msg: impl Into<String>, retriable: bool) -> Self {
        Error::Provider {
            provider: provider.to_string(),
            msg: msg.into(),
            retriable,
        }
    }

    /// Whether retrying the same call may succeed (transient provider failures only).
    pub fn is_retriable(&self) -> bool {
        matches!(self, Error::Provider { retriable: true, .. })
    }
}
