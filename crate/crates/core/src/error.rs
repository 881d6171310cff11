use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unknown generator `{0}` (expected one of sea, checkerboard, hyperplane, highdim, csv)")]
    UnknownGenerator(String),

    #[error("unknown detector `{0}` (expected one of hlfr, lfr, ddm, eddm, stepd, ddm_oci)")]
    UnknownDetector(String),

    #[error("invalid label {0}: labels must be 0 or 1")]
    InvalidLabel(i64),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("{path}: row {row}: {message}")]
    Row {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("bound table has no slice for {what} = {value}")]
    MissingSlice { what: &'static str, value: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
