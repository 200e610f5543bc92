use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the simulation, matching and estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    /// A signal with zero norm cannot be normalized, so it cannot be matched.
    #[error("degenerate signal: {0}")]
    DegenerateSignal(String),

    #[error("stale dictionary: {0}")]
    StaleDictionary(String),

    #[error("parse error in {source_name}: {message}")]
    Parse { source_name: String, message: String },

    #[error("too many failed draws: {failures} of {draws} failed (at most {allowed} allowed)")]
    TooManyFailures {
        failures: usize,
        draws: usize,
        allowed: usize,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Input errors (bad files, bad arguments) as opposed to numerical failures.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidInput(_)
                | Error::Dimension { .. }
                | Error::StaleDictionary(_)
                | Error::Parse { .. }
                | Error::Io { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
