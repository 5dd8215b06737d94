use thiserror::Error;

use crate::hardware::BackendChoice;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no adapter available for backend `{backend}`: {reason}")]
    NoAdapter { backend: BackendChoice, reason: String },

    #[error("device max workgroup size {actual} is below the required {required}")]
    LimitsTooSmall { actual: u32, required: u32 },

    #[error("size mismatch: expected {expected} elements, got {actual}")]
    SizeMismatch { expected: usize, actual: usize },

    #[error("buffer map failed: {0}")]
    MapFailed(String),

    #[error("dimension mismatch: {0}")]
    DimsMismatch(String),

    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },

    #[error(
        "mega-kernel limited to a single workgroup: hidden={hidden}, intermediate={intermediate} \
         exceeds the toy regime"
    )]
    MegaKernelScaleExceeded { hidden: usize, intermediate: usize },

    #[error("device lost: {0}")]
    DeviceLost(String),

    #[error("gpu validation error: {0}")]
    Gpu(String),

    #[error("monotonic clock resolution {resolution_ns} ns is coarser than 1 us")]
    ClockTooCoarse { resolution_ns: u64 },

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("dispatches_saved must be positive")]
    ZeroSavedDispatches,

    #[error("per-dispatch range [{low}, {high}] us must satisfy low <= high <= per-op {per_op} us")]
    RangeInverted { low: f64, high: f64, per_op: f64 },

    #[error("model needs {required} bytes in one buffer but the device allows {limit}")]
    OutOfMemory { required: u64, limit: u64 },

    #[error("unknown experiment `{0}`")]
    UnknownExperiment(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invariant violated: {0}")]
    InvariantViolation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code for the CLI: 3 for invariant violations, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvariantViolation(_) => 3,
            _ => 2,
        }
    }
}
