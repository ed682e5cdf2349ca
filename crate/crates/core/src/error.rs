use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A real value does not fit the declared fixed-point range.
    #[error("value {value} at coordinate {coordinate} is outside the fixed-point range (|x| < 2^{range_bits} units at {frac_bits} fractional bits)")]
    Range {
        coordinate: usize,
        value: f64,
        frac_bits: u32,
        range_bits: u32,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("dataset is empty{0}")]
    EmptyDataset(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },

    #[error("malformed {kind} file: {message}")]
    Format { kind: &'static str, message: String },

    #[error("linear solve failed: {0}")]
    Solver(String),

    #[error("KKT residual {residual} exceeds tolerance {tolerance} (fixed-point units) in block {block}")]
    ResidualExceeded {
        block: usize,
        residual: i128,
        tolerance: i128,
    },

    #[error("inconsistent inputs: {0}")]
    Inconsistent(String),

    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(kind: &'static str, message: impl Into<String>) -> Self {
        Error::Format {
            kind,
            message: message.into(),
        }
    }
}
