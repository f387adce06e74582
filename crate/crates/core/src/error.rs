use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: expected {expected}, found {found}")]
    DimensionMismatch {
        op: &'static str,
        expected: String,
        found: String,
    },

    /// A Cholesky pivot was not positive; usually the ridge term is too small.
    #[error("matrix is not positive definite (pivot {index} = {value:e})")]
    NotPositiveDefinite { index: usize, value: f64 },

    #[error("parameter shapes differ: {0}")]
    ShapeMismatch(String),

    #[error("non-finite {0} loss")]
    NonFiniteLoss(&'static str),

    #[error("cannot sample from an empty buffer")]
    EmptyBuffer,

    #[error("action component {index} = {value} outside [{low}, {high}]")]
    ActionOutOfBounds {
        index: usize,
        value: f64,
        low: f64,
        high: f64,
    },

    #[error("training diverged at step {step}: {reason}")]
    DivergenceAbort { step: u64, reason: String },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn dim_mismatch(
    op: &'static str,
    expected: impl ToString,
    found: impl ToString,
) -> Error {
    Error::DimensionMismatch {
        op,
        expected: expected.to_string(),
        found: found.to_string(),
    }
}
