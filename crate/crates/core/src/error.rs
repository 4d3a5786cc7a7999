use std::io;

use thiserror::Error;

/// Errors produced by every stage of the hashing pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("malformed file: {0}")]
    MalformedFile(String),

    #[error("missing input: {0}")]
    MissingInput(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("invalid k: {0}")]
    InvalidK(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("singular linear system: {0}")]
    SingularSystem(String),

    #[error("degenerate anchor {0}: zero similarity mass")]
    DegenerateAnchor(usize),

    #[error("invalid sign value {0} (expected -1 or +1)")]
    InvalidSign(f64),

    #[error("index is empty")]
    EmptyIndex,

    #[error("numerical failure: {0}")]
    Numerical(String),
}

/// Exit-code family of an error, as used by the command-line front end.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidConfig(_) | Error::InvalidSplit(_) | Error::InvalidK(_) => ErrorKind::Config,
            Error::Numerical(_) | Error::SingularSystem(_) => ErrorKind::Numerical,
            _ => ErrorKind::Data,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Shorthand for building a `DimensionMismatch` from a format string.
macro_rules! dim_err {
    ($($arg:tt)*) => {
        $crate::error::Error::DimensionMismatch(format!($($arg)*))
    };
}
pub(crate) use dim_err;
