use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Mismatched shapes, bad strides, even kernels and the like.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("unsupported format: {field}: {detail}")]
    UnsupportedFormat { field: String, detail: String },

    #[error("unsupported sample rate {0} Hz (expected 16000)")]
    UnsupportedRate(u32),

    #[error("invalid label {label} at position {position}: blank may not appear in a target sequence")]
    InvalidLabel { label: usize, position: usize },

    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("vocabulary error: {0}")]
    Vocab(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

/// Fails with a configuration error naming `what` unless `a == b`.
pub(crate) fn ensure_eq<T: PartialEq + std::fmt::Debug>(what: &str, a: T, b: T) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::Config(format!("{what}: {a:?} != {b:?}")))
    }
}
