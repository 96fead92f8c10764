use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the imputation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("spot alignment failed: {0}")]
    Alignment(String),

    #[error("invalid parameter `{name}`: {msg}")]
    InvalidParameter { name: String, msg: String },

    #[error("spot `{spot}` (row {row}) has zero total expression")]
    ZeroRowSum { row: usize, spot: String },

    #[error("isolated spot at row {row}{}: affinity row sums to zero", spot.as_deref().map(|s| format!(" (`{s}`)")).unwrap_or_default())]
    IsolatedSpot { row: usize, spot: Option<String> },

    #[error("non-finite loss at epoch {epoch}, batch {batch} (parameter norms: {param_norms})")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        param_norms: String,
    },

    #[error("gene set mismatch: {0}")]
    GeneMismatch(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("resource exhausted: {0}")]
    Resource(String),

    #[error("dataset has no ground-truth labels")]
    MissingLabels,
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn param(name: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
