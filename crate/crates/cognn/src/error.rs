//! Crate-wide error type.
//!
//! Errors split into two families, and the CLI exit code follows them:
//! validation-style errors (bad shapes, bad config, API misuse) map to exit
//! code 1, while I/O and data-file failures map to exit code 2.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shape or dimension mismatch.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An argument value outside its documented domain.
    #[error("invalid argument: {0}")]
    Invalid(String),

    /// API misuse that a caller can always avoid (e.g. reusing a spent tape).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Run-configuration problems; messages carry the offending key or line.
    #[error("config error: {0}")]
    Config(String),

    /// A dataset or checkpoint file that exists but does not parse.
    #[error("parse error in {file}, line {line}: {msg}")]
    DataParse {
        file: String,
        line: usize,
        msg: String,
    },

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },

    /// Filesystem failures.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code the CLI should use for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) | Error::DataParse { .. } => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
