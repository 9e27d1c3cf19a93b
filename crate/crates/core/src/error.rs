use std::path::PathBuf;

use thiserror::Error;

/// Errors produced across the despeckling pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {reason}")]
    Io { path: PathBuf, reason: String },

    #[error("{path}: unsupported format: {reason}")]
    UnsupportedFormat { path: PathBuf, reason: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("corrupt file: {0}")]
    CorruptFile(String),

    #[error("version mismatch: {0}")]
    VersionMismatch(String),

    #[error("batch norm layer has no running statistics yet")]
    UncalibratedBatchNorm,

    #[error("trace does not match parameters: {0}")]
    TraceMismatch(String),

    #[error("non-finite loss at iteration {iteration}: l_e={euclidean}, l_tv={tv}")]
    NonFiniteLoss {
        iteration: usize,
        euclidean: f64,
        tv: f64,
    },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, err: impl std::fmt::Display) -> Self {
        Error::Io {
            path: path.into(),
            reason: err.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
