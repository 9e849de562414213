use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("value `{value}` in column `{column}` matches no binarization rule")]
    Unbinarizable { column: String, value: String },

    #[error("split `{0}` is empty")]
    EmptySplit(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("degenerate group: no instance with s = {0}")]
    DegenerateGroup(u8),

    #[error("degenerate cell: no instance with s = {s}, y = {y}")]
    DegenerateCell { s: u8, y: u8 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("instance ids differ between {left} and {right}")]
    IdMismatch { left: String, right: String },

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("missing artifact {0}")]
    MissingArtifact(PathBuf),

    #[error("config hash mismatch: {path} was produced by {found}, expected {expected}")]
    ConfigHashMismatch {
        path: PathBuf,
        found: String,
        expected: String,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(context: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.to_string(),
        }
    }
}
