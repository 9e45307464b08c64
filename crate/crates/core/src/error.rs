use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("numeric domain error: {0}")]
    Numeric(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("ingest error: {0}")]
    Ingest(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error class. Kept in sync with `forge --help`.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Shape(_) | Error::Input(_) | Error::Training(_) | Error::Ingest(_) => {
                exit_codes::INPUT
            }
            Error::Format(_) => exit_codes::FORMAT,
            Error::Numeric(_) => exit_codes::NUMERIC,
            Error::Io { .. } => exit_codes::IO,
        }
    }
}

pub mod exit_codes {
    pub const SUCCESS: i32 = 0;
    pub const INPUT: i32 = 2;
    pub const FORMAT: i32 = 3;
    pub const NUMERIC: i32 = 4;
    pub const IO: i32 = 5;
}
