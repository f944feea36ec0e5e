//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by the library. The CLI maps these onto exit codes:
/// configuration/input problems exit 1, numeric failures exit 2.
#[derive(Error, Debug)]
pub enum Error {
    /// A model, layer, or run was configured inconsistently.
    #[error("configuration error: {0}")]
    Config(String),

    /// Caller-supplied data violated an operation's contract.
    #[error("input error: {0}")]
    Input(String),

    /// A numeric invariant was violated (NaN/Inf or a diverging loss).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A file could not be parsed; `line` is 1-based.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// A dataset descriptor did not match the data it describes.
    #[error("descriptor error: {0}")]
    Descriptor(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Exit code the CLI should use for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric(_) => 2,
            _ => 1,
        }
    }
}
