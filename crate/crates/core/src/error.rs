//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by channel generation, recovery, learning, and the harness.
#[derive(Debug, Error)]
pub enum Error {
    /// A value violated a documented domain restriction.
    #[error("domain error: {0}")]
    Domain(String),

    /// Array arguments had inconsistent shapes.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A configuration file or descriptor could not be used.
    #[error("configuration error: {0}")]
    Config(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: u64, detail: String },

    /// A checkpoint file was missing or malformed.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Results file I/O or parsing failed.
    #[error("results error: {0}")]
    Results(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
