use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("point ({x}, {y}) is outside a {width}x{height} grid")]
    Bounds {
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("non-finite value at {location}")]
    Numeric { location: String },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("malformed {format} input: {reason}")]
    Format {
        format: &'static str,
        reason: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn format(format: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            format,
            reason: reason.into(),
        }
    }
}
