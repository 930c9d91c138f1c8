//! Error taxonomy shared across the crate.
//!
//! Variants map onto process exit codes at the CLI boundary: config errors
//! exit 2, data errors exit 3, numerical divergence exits 4.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration value or inconsistent knob combination.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed or inconsistent input data (parse failures, empty pools,
    /// label/schema violations).
    #[error("data error: {0}")]
    Data(String),

    /// Shape or dimension mismatch between operands.
    #[error("shape error: {0}")]
    Shape(String),

    /// A numerical routine produced a non-finite state.
    #[error("divergence at step {step}: {msg}")]
    Divergence { step: usize, msg: String },

    /// Underlying I/O failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Exit code this error maps to at the CLI boundary.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) | Error::Shape(_) | Error::Io(_) => 3,
            Error::Divergence { .. } => 4,
        }
    }
}
