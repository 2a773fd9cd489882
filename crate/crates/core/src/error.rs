use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the solver library.
#[derive(Debug, Error)]
pub enum Error {
    /// An input contained NaN or an infinite value.
    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("unsupported scheme: {0}")]
    UnsupportedScheme(String),

    /// A basis specification that cannot be built (bad grid, duplicate centers).
    #[error("invalid basis specification: {0}")]
    BasisSpec(String),

    #[error("index out of range: {what} = {index}, limit {limit}")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// A repetition of an experiment produced a non-finite time-0 value.
    #[error("repetition {repetition} at M = {paths} produced a non-finite value ({value})")]
    NonFiniteResult {
        repetition: usize,
        paths: usize,
        value: f64,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
