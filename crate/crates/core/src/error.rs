use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the bandit policies, environments and experiment driver.
#[derive(Debug, Error)]
pub enum Error {
    #[error("no candidates")]
    NoCandidates,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("horizon exceeded: environment already advanced {horizon} steps")]
    HorizonExceeded { horizon: usize },

    #[error("undefined (division by zero); no preference equilibrium predicted")]
    ZeroGap,

    #[error("row {row}: {message}")]
    Data { row: usize, message: String },

    #[error("stream '{stream}' exhausted: needs {needed} rows, has {available}")]
    StreamExhausted {
        stream: String,
        needed: usize,
        available: usize,
    },

    #[error("configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }
}
