//! Error type shared across the crate.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{path}:{line}: {msg}")]
    Load { path: String, line: usize, msg: String },

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape { op: &'static str, lhs: (usize, usize), rhs: (usize, usize) },

    #[error("non-finite value produced by {op}")]
    Numeric { op: &'static str },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("vocabulary hash mismatch: checkpoint was trained with a different {0} vocabulary")]
    VocabHash(&'static str),
}

pub type Result<T> = std::result::Result<T, Error>;
