use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("{0}")]
    Domain(String),
    /// A named parameter violates its constraint.
    #[error("invalid {name}: {message}")]
    Param { name: &'static str, message: String },
    /// The closed form asked for does not exist for these arguments.
    #[error("{0}")]
    Unsupported(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    /// A loss or parameter became non-finite.
    #[error("non-finite value: {0}")]
    Numerical(String),
    #[error("config {field}: {message}")]
    Config { field: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn param(name: &'static str, message: impl Into<String>) -> Self {
        Error::Param {
            name,
            message: message.into(),
        }
    }

    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable identifier printed in CLI diagnostics, e.g. `E_DOMAIN`.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Domain(_) | Error::Param { .. } => "E_DOMAIN",
            Error::Unsupported(_) => "E_UNSUPPORTED",
            Error::Shape(_) => "E_SHAPE",
            Error::Numerical(_) => "E_NUMERICAL",
            Error::Config { .. } => "E_CONFIG",
            Error::Io { .. } => "E_IO",
            Error::Parse { .. } => "E_PARSE",
        }
    }
}
