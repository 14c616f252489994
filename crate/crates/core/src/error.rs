use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("numeric failure: {context}")]
    NumericFailure { context: String },

    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("decomposition unsupported: {0}")]
    DecompositionUnsupported(String),

    #[error("unsupported boundary lift: {0}")]
    UnsupportedLift(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("malformed checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
