use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library. CLI maps these to exit code 1.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: decode error: {reason}")]
    Decode { path: PathBuf, reason: String },

    #[error("{path}: unsupported image: {reason}")]
    Unsupported { path: PathBuf, reason: String },

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("batch norm running statistics are not set; cannot evaluate in eval mode")]
    BatchNormUninitialized,

    #[error("weights format error: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("empty corpus: {0}")]
    EmptyCorpus(String),

    #[error(
        "training diverged at iteration {iteration}: loss = {loss}, gradient norm = {grad_norm}"
    )]
    Diverged {
        iteration: usize,
        loss: f64,
        grad_norm: f64,
    },

    #[error("checkpoint does not match: {0}")]
    Mismatch(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
