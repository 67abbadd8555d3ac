use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes are incompatible for the requested operation.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A caller-supplied parameter is out of its valid range.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// An API precondition was violated (missing gradient, non-scalar loss, ...).
    #[error("contract error: {0}")]
    Contract(String),

    /// A container or snapshot failed validation. `field` names the offending field.
    #[error("format error in {field}: {detail}")]
    Format { field: &'static str, detail: String },

    /// The entropy decoder ran out of input.
    #[error("decode error at byte {position}: {detail}")]
    Decode { position: usize, detail: String },

    /// A bitstream was produced for a different model or codec.
    #[error("incompatible: {0}")]
    Incompatible(String),

    /// A non-finite value appeared where finite values are required.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub(crate) fn format(field: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            field,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
