use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("empty domain: {0}")]
    EmptyDomain(String),

    #[error("{what} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NotConverged {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("NaN encountered in {what} at iteration {iteration}")]
    NanGuard { what: &'static str, iteration: usize },

    #[error("resolution too coarse: {0}")]
    Resolution(String),

    #[error("placement failed: {0}")]
    Placement(String),

    #[error("not star-shaped: ray {ray} (direction {direction:?}) crosses the level set {crossings} times")]
    NotStarShaped {
        ray: usize,
        direction: [f64; 3],
        crossings: usize,
    },

    #[error("snapshot format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("snapshot length mismatch in {path}: expected {expected} values, found {found}")]
    LengthMismatch {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn arg(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            name,
            reason: reason.into(),
        }
    }
}
