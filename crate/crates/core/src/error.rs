use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("mask width mismatch: {0} vs {1}")]
    WidthMismatch(usize, usize),

    #[error("width {0} exceeds the cap of {max} coordinates", max = crate::MAX_WIDTH)]
    WidthTooLarge(usize),

    #[error("invalid mask {0:?}: {1}")]
    InvalidMask(String, String),

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("invalid pmf: {0}")]
    InvalidPmf(String),

    #[error("invalid samples: {0}")]
    InvalidSamples(String),

    #[error("length {0} is not a power of two")]
    NotPowerOfTwo(usize),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("row-space residual {residual:e} exceeds tolerance {tol:e}")]
    RowSpaceDefect { residual: f64, tol: f64 },

    #[error("value {0} outside [-1, 1]")]
    OutOfRange(f64),

    #[error("invalid source: {0}")]
    InvalidSource(String),

    #[error("{0}")]
    LimitExceeded(String),

    #[error("unknown format {0:?}")]
    UnknownFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
