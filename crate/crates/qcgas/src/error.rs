//! Error type shared across the crate.
//!
//! Two categories matter operationally: `Invalid` marks rejected input
//! (bad preconditions, malformed configuration) and maps to exit code 1 in
//! the CLI; `Numerical` marks a computation that refused to produce a value
//! (non-positive superstability constant, denominator error bar crossing
//! zero, no sign change for a root) and maps to exit code 2.

use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Input validation failure: precondition or configuration error.
    Invalid(String),
    /// Numerical rejection: the requested quantity is not computable at
    /// the given parameters and silently returning a value would be wrong.
    Numerical(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    /// CLI exit code for this error category.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Invalid(_) => 1,
            Error::Numerical(_) => 2,
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Invalid(msg) => write!(f, "invalid input: {msg}"),
            Error::Numerical(msg) => write!(f, "numerical rejection: {msg}"),
        }
    }
}

impl std::error::Error for Error {}

pub type Result<T> = std::result::Result<T, Error>;
