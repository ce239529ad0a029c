use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the falsification pipeline.
///
/// Variants are grouped so a front end can map them onto exit codes:
/// input validation, twin protocol failures, and I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Record { path: PathBuf, line: usize, message: String },

    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid hypothesis {id}: {message}")]
    Hypothesis { id: u64, message: String },

    #[error("empty sample: {0}")]
    EmptySample(String),

    #[error("twin protocol error: {0}")]
    Protocol(String),

    #[error("twin protocol timeout after {completed} of {requested} responses")]
    Timeout { completed: usize, requested: usize },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidArgument(message.into())
    }

    /// True for errors caused by bad user input rather than the environment.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Record { .. }
                | Error::Schema(_)
                | Error::InvalidArgument(_)
                | Error::Hypothesis { .. }
                | Error::EmptySample(_)
                | Error::Json(_)
        )
    }

    pub fn is_protocol(&self) -> bool {
        matches!(self, Error::Protocol(_) | Error::Timeout { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
