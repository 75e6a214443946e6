//! Crate-wide error type.

use std::fmt;

/// Errors produced by construction, solving, and I/O.
#[derive(Debug)]
pub enum Error {
    /// Shape or index mismatch between operands.
    Dimension(String),
    /// Numerically singular operation (rank-deficient observability matrix,
    /// `I - A` not invertible, ...).
    Singular(String),
    /// Invalid configuration value (non-positive weight, horizon too short,
    /// bounds crossing, ...).
    Config(String),
    /// A supplied initial window is not consistent with the recorded data.
    InconsistentWindow { residual: f64 },
    /// File parsing failure.
    Parse(String),
    /// Underlying I/O failure.
    Io(std::io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension(msg) => write!(f, "dimension error: {msg}"),
            Error::Singular(msg) => write!(f, "singular matrix: {msg}"),
            Error::Config(msg) => write!(f, "invalid configuration: {msg}"),
            Error::InconsistentWindow { residual } => write!(
                f,
                "initial window is not a system trajectory (least-squares residual {residual:.3e})"
            ),
            Error::Parse(msg) => write!(f, "parse error: {msg}"),
            Error::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
