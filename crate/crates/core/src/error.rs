use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller passed a value outside the operation's domain.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Inputs are individually valid but inconsistent with each other
    /// (mismatched extents, stack dims that do not match the graph, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// A file or byte stream does not follow its declared format.
    #[error("format error: {0}")]
    Format(String),

    #[error("fingerprint mismatch: stored {stored:#018x}, rig {expected:#018x}")]
    Fingerprint { stored: u64, expected: u64 },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
