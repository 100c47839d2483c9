use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: format error at byte {offset}: {msg}", path.display())]
    Format {
        path: PathBuf,
        offset: usize,
        msg: String,
    },

    #[error("label {value} at (row {row}, col {col}) is out of range for {classes} classes")]
    LabelRange {
        row: usize,
        col: usize,
        value: u8,
        classes: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty region: {0}")]
    EmptyRegion(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("training diverged at epoch {epoch}: {msg}")]
    Divergence { epoch: usize, msg: String },

    #[error("non-finite gradient: {count} bad coordinates, first at index {index} = {value}")]
    NonFiniteGradient {
        index: usize,
        value: f64,
        count: usize,
    },

    #[error("regime mismatch: {0}")]
    Regime(String),

    #[error("config: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
