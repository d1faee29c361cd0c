//! Crate-wide error type.

use std::path::PathBuf;

use crate::train::Checkpoint;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors emitted by the core library.
#[derive(Debug)]
pub enum Error {
    /// An operation received a tensor whose shape does not match the contract.
    ShapeMismatch {
        context: String,
        expected: String,
        actual: String,
    },
    /// A loss evaluated to NaN or infinity for the given batch sample.
    NonFiniteLoss { sample: usize },
    /// An input gradient came back NaN or infinite for the given batch sample.
    NonFiniteGradient { sample: usize },
    /// A parameter gradient handed to the optimizer is NaN or infinite.
    NonFiniteUpdate { param: String },
    /// A configuration value violates its documented range or pairing rule.
    InvalidConfig { what: String },
    /// A binary file (dataset or checkpoint) failed to parse.
    Format { field: String, detail: String },
    /// Filesystem failure while reading or writing an artifact.
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    /// Training hit a non-finite loss; coordinates and the last good state are kept.
    Diverged {
        epoch: usize,
        batch: usize,
        last_good: Box<Checkpoint>,
    },
}

impl std::fmt::Display for Error {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Error::ShapeMismatch {
                context,
                expected,
                actual,
            } => write!(
                f,
                "{context}: shape mismatch, expected {expected} but got {actual}"
            ),
            Error::NonFiniteLoss { sample } => {
                write!(f, "non-finite loss at batch sample {sample}")
            }
            Error::NonFiniteGradient { sample } => {
                write!(f, "non-finite input gradient at batch sample {sample}")
            }
            Error::NonFiniteUpdate { param } => {
                write!(f, "non-finite gradient for parameter {param}")
            }
            Error::InvalidConfig { what } => write!(f, "invalid configuration: {what}"),
            Error::Format { field, detail } => write!(f, "format error in {field}: {detail}"),
            Error::Io { path, source } => write!(f, "io error on {}: {source}", path.display()),
            Error::Diverged { epoch, batch, .. } => write!(
                f,
                "training diverged (non-finite loss) at epoch {epoch}, batch {batch}"
            ),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(field: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Format {
            field: field.into(),
            detail: detail.into(),
        }
    }

    pub fn config(what: impl Into<String>) -> Self {
        Error::InvalidConfig { what: what.into() }
    }
}
