use std::io;

use thiserror::Error;

/// Errors raised by configuration, data ingestion and model persistence.
///
/// Violated preconditions on hot-path numerical routines (mismatched vector
/// lengths, out-of-range label ids) panic instead.
#[derive(Debug, Error)]
pub enum MimlError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("line {line}: {message}")]
    Load { line: usize, message: String },

    #[error("invalid model file: {0}")]
    ModelFormat(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("no trainable contrast: bag {bag} is relevant to every label")]
    NoContrast { bag: String },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, MimlError>;
