use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("filter design: {0}")]
    Design(String),

    #[error("input too short: need at least {needed} samples, got {got}")]
    Length { needed: usize, got: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("degenerate channel: {0}")]
    DegenerateChannel(String),

    #[error("degenerate series: {0}")]
    DegenerateSeries(String),

    #[error("batch normalization needs at least 2 samples per feature in train mode, got {0}")]
    DegenerateBatch(usize),

    #[error("unknown channel {0:?}")]
    Channel(String),

    #[error("trial with onset {onset} has {onset} samples of history, lag window needs {needed}")]
    History { onset: usize, needed: usize },

    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Divergence { epoch: usize },

    #[error("report has no cells")]
    EmptyReport,

    #[error("{context}: {message}")]
    Format { context: String, message: String },

    #[error("{context}: {message}")]
    Validation { context: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(context: impl fmt::Display, message: impl Into<String>) -> Self {
        Error::Format { context: context.to_string(), message: message.into() }
    }

    pub(crate) fn validation(context: impl fmt::Display, message: impl Into<String>) -> Self {
        Error::Validation { context: context.to_string(), message: message.into() }
    }
}
