use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimensions: n = {n}, d = {d} (both must be at least 1)")]
    InvalidDimensions { n: usize, d: usize },

    #[error("sample index {index} out of range for n = {n}")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("{0} must not be empty")]
    Empty(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// An unsafeguarded Polyak rule met a zero subgradient with a positive numerator.
    #[error("zero subgradient with positive Polyak numerator {numerator}")]
    ZeroSubgradient { numerator: f64 },

    #[error("zero subgradient at step {step} on samples {samples:?} (numerator {numerator})")]
    ZeroSubgradientAt {
        step: u64,
        samples: Vec<usize>,
        numerator: f64,
    },

    #[error("non-finite iterate at step {step} (coordinate {coordinate})")]
    NonFinite { step: u64, coordinate: usize },

    #[error("run {run} (seed {seed}) failed: {source}")]
    RunFailed {
        run: usize,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}
