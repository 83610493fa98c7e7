use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unsupported layout: {0}")]
    UnsupportedLayout(String),

    #[error("unsupported ordering: {0}")]
    UnsupportedOrdering(String),

    #[error("degenerate rotation: {0}")]
    Normalization(String),

    #[error("corrupt input: {0}")]
    Corrupt(String),

    #[error("corrupt stream at token {position}: {reason}")]
    CorruptStream { position: usize, reason: String },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    TrainingDiverged { epoch: usize, loss: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Coarse error classes, stable across releases. Used for CLI exit codes
/// and C status codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    InvalidInput,
    Unsupported,
    Corrupt,
    InvalidState,
    Numerical,
    Parse,
    Io,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidInput(_) | Error::Normalization(_) => ErrorKind::InvalidInput,
            Error::UnsupportedLayout(_) | Error::UnsupportedOrdering(_) => ErrorKind::Unsupported,
            Error::Corrupt(_) | Error::CorruptStream { .. } => ErrorKind::Corrupt,
            Error::InvalidState(_) => ErrorKind::InvalidState,
            Error::TrainingDiverged { .. } | Error::Numerical(_) => ErrorKind::Numerical,
            Error::Parse(_) => ErrorKind::Parse,
            Error::Io(_) => ErrorKind::Io,
        }
    }

    /// Process exit code for this error class. 0 is success and 2 is
    /// reserved for command-line usage errors.
    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            ErrorKind::InvalidInput => 3,
            ErrorKind::Io => 4,
            ErrorKind::Corrupt => 5,
            ErrorKind::Numerical => 6,
            ErrorKind::Unsupported => 7,
            ErrorKind::InvalidState => 8,
            ErrorKind::Parse => 9,
        }
    }
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
