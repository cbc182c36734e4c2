use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes do not line up for an operation.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Architecture or run configuration is inconsistent.
    #[error("config error: {0}")]
    Config(String),

    /// An API was called outside of its contract.
    #[error("usage error: {0}")]
    Usage(String),

    /// A file did not match its expected layout.
    #[error("format error: {0}")]
    Format(String),

    /// A CRC32 check over a serialized record failed.
    #[error("checksum mismatch in {record}: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum {
        record: String,
        stored: u32,
        computed: u32,
    },

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    /// Training produced a NaN or infinite loss.
    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Divergence { epoch: usize, step: usize, loss: f64 },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

macro_rules! dim_err {
    ($($arg:tt)*) => { $crate::error::Error::Dimension(format!($($arg)*)) };
}
macro_rules! config_err {
    ($($arg:tt)*) => { $crate::error::Error::Config(format!($($arg)*)) };
}
macro_rules! usage_err {
    ($($arg:tt)*) => { $crate::error::Error::Usage(format!($($arg)*)) };
}
macro_rules! format_err {
    ($($arg:tt)*) => { $crate::error::Error::Format(format!($($arg)*)) };
}
pub(crate) use {config_err, dim_err, format_err, usage_err};
