//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by loading, validation, metric computation, and training.
#[derive(Debug, Error)]
pub enum Error {
    /// A record file line could not be parsed.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Input data violated a structural invariant.
    #[error("validation error: {0}")]
    Validation(String),

    /// Vector or tensor dimensions did not agree.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// An argument was outside the operation's domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Risk is requested at zero coverage, where it is undefined.
    #[error("risk is undefined at zero coverage")]
    UndefinedRisk,

    /// No threshold attains the requested risk level.
    #[error("target risk {0} unreachable")]
    UnreachableRisk(f64),

    /// A configuration value is invalid.
    #[error("config error: {0}")]
    Config(String),

    /// A checkpoint file is missing, malformed, or incompatible.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by bad inputs rather than internal failures.
    ///
    /// The CLI maps these to exit code 2 and everything else to 3.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Validation(_)
                | Error::Dimension(_)
                | Error::Domain(_)
                | Error::Config(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
