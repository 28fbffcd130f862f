use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("i/o error: {0}")]
    Stream(#[from] std::io::Error),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated payload: need {needed} bytes, {available} available")]
    Truncated { needed: u64, available: u64 },

    #[error("declared payload of {declared} bytes exceeds cap of {cap} bytes")]
    OversizeDeclaration { declared: u64, cap: u64 },

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unbalanced classes: {0}")]
    Unbalanced(String),

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("degenerate column {0}")]
    DegenerateColumn(usize),

    #[error("degenerate: {0}")]
    Degenerate(String),

    #[error("no unique circumsphere: {0}")]
    NoUniqueCircumsphere(String),

    #[error("pose columns are not orthonormal (deviation {0:e})")]
    NonOrthonormalPose(f64),

    #[error("max-margin problem infeasible: {0}")]
    Infeasible(String),

    #[error(
        "solver did not converge after {iterations} iterations \
         (constraint violation {violation:e}, complementarity {complementarity:e})"
    )]
    NotConverged {
        iterations: usize,
        violation: f64,
        complementarity: f64,
    },

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
