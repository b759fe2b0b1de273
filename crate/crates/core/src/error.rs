use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite (failed at pivot {pivot}, value {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("too few samples: need at least {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("sample has (numerically) zero variance")]
    ZeroVariance,

    #[error("row {row} has zero norm")]
    ZeroNormRow { row: usize },

    #[error("tangent rank {rank} exceeds ambient dimension {dim}")]
    InvalidRank { rank: usize, dim: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("loss diverged (non-finite) at step {step}")]
    DivergenceDetected { step: usize },

    #[error("unsupported {kind} format version {version}")]
    UnsupportedVersion { kind: &'static str, version: u32 },

    #[error("failed to parse {what}: {message}")]
    Parse { what: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
