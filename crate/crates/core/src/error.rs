use std::path::PathBuf;

use thiserror::Error;

use crate::geolocation::FitResult;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: header mismatch: expected `{expected}`, found `{found}`", path.display())]
    Header {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("missing upstream output {}: run `{producer}` first", path.display())]
    MissingUpstream { path: PathBuf, producer: &'static str },

    #[error("impossible observation at tick {tick}: no tile is compatible with the event history")]
    ImpossibleObservation { tick: usize },

    #[error("optimizer failed on every restart: {message}")]
    OptimizerFailed {
        message: String,
        best: Option<Box<FitResult>>,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// True for failures of the numerical layers, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::ImpossibleObservation { .. } | Error::OptimizerFailed { .. } | Error::Numerical(_)
        )
    }
}
