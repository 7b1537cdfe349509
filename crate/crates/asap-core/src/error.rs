//! Error type shared across the crate.

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid shapes, factors, or hyperparameters detected before running.
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed input data (bad label index, unsupported pixel format, ...).
    #[error("data error: {0}")]
    Data(String),

    /// API misuse, e.g. a backward pass fed a cache from a different forward.
    #[error("usage error: {0}")]
    Usage(String),

    /// Checkpoint or config file does not match the expected format/version.
    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Training produced a non-finite loss; carries a diagnostic snapshot.
    #[error("non-finite loss at step {step}: {detail}")]
    NonFinite { step: u64, detail: String },

    /// A buffer could not be allocated (benchmarks report this per stage).
    #[error("allocation failure: {0}")]
    Alloc(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
