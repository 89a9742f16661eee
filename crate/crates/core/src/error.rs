use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    /// Malformed bytes in a tensor or model file.
    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported dtype `{found}` (supported: {supported})")]
    UnsupportedDtype {
        found: String,
        supported: &'static str,
    },

    /// Well-formed input whose values violate a data invariant (NaN, label out of range, ...).
    #[error("data error: {0}")]
    Data(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("manifest error at `{field}`: {message}")]
    Manifest { field: String, message: String },

    #[error("split error: {0}")]
    Split(String),

    #[error("invalid argument: {0}")]
    Argument(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn manifest(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Manifest {
            field: field.into(),
            message: message.into(),
        }
    }
}
