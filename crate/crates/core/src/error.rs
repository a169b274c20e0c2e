use std::io;

use thiserror::Error;

/// Errors produced by the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("format error: {0}")]
    Format(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("centroid store is empty")]
    EmptyStore,

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("no convergence after {iterations} iterations: {what}")]
    Convergence { what: &'static str, iterations: usize },

    #[error("invalid synthetic spec: {0}")]
    Spec(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn dim(expected: usize, actual: usize) -> Self {
        Error::Dimension { expected, actual }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
