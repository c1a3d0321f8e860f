//! Error type shared across the crate.

use std::path::PathBuf;

/// Errors produced by any pipeline stage.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor or image dimensions do not line up for the requested operation.
    #[error("{op}: shape mismatch: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    /// Mixed F32/F64 operands.
    #[error("{op}: dtype mismatch: all operands must share one dtype")]
    DtypeMismatch { op: &'static str },

    /// A class label outside `0..num_classes`.
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    /// Backward was seeded from a non-scalar node.
    #[error("backward seed must be a scalar, got shape {shape:?}")]
    SeedNotScalar { shape: Vec<usize> },

    /// An operation that needs data got none.
    #[error("{op}: empty input")]
    EmptyInput { op: &'static str },

    /// A parameter value outside its documented domain.
    #[error("{op}: invalid argument: {detail}")]
    InvalidArgument { op: &'static str, detail: String },

    /// Too few distinct samples to fit the requested mixture.
    #[error("gmm fit needs at least {k} distinct values, got {distinct}; try a smaller K")]
    TooFewDistinctValues { distinct: usize, k: usize },

    /// Every adjacent mixture component pair collapsed onto one mean, so
    /// the fit yields no usable threshold.
    #[error("mixture components collapsed: no threshold candidates")]
    CollapsedMixture,

    /// Exhaustive subset search would enumerate too many subsets.
    #[error("exhaustive fuse guard exceeded: {subsets} subsets > limit {limit}")]
    SubsetGuardExceeded { subsets: u128, limit: u128 },

    /// Landmark set does not determine a similarity transform.
    #[error("degenerate landmarks: {detail}")]
    DegenerateLandmarks { detail: String },

    /// Training loss became non-finite.
    #[error("training diverged at epoch {epoch}: loss is not finite")]
    TrainingDiverged { epoch: usize },

    /// Malformed container or image file.
    #[error("{path}: {detail}")]
    BadFormat { path: PathBuf, detail: String },

    /// A referenced input file is missing or unreadable.
    #[error("cannot read {path}: {source}")]
    InputIo {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code contract: 2 bad usage, 3 invalid input data,
    /// 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::TrainingDiverged { .. } => 4,
            Error::InvalidArgument { .. } => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
