use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("value {value} at index {index} is not a binary (+1/-1) value")]
    NotBinary { index: usize, value: i32 },

    #[error("fixed-point value {value} at index {index} is outside [-31, 31]")]
    FixedOutOfRange { index: usize, value: i32 },

    #[error("match count {y} exceeds operand length {cnum}")]
    CountOutOfRange { y: i64, cnum: u64 },

    #[error("invalid batch-norm parameters: {0}")]
    InvalidBatchNorm(String),

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("layer {index} ({name}): {reason}")]
    Layer {
        index: usize,
        name: String,
        reason: String,
    },

    #[error("invalid architecture parameters: {0}")]
    InvalidArch(String),

    #[error("infeasible budget: {0}")]
    Infeasible(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn layer(index: usize, name: &str, reason: impl Into<String>) -> Self {
        Error::Layer {
            index,
            name: name.to_string(),
            reason: reason.into(),
        }
    }
}
