use std::path::PathBuf;

use thiserror::Error;

/// Everything that can go wrong in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unsupported mesh format: {0}")]
    UnsupportedFormat(String),

    #[error("parse error in {path} at line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("face index out of range: {index} (mesh has {vertex_count} vertices)")]
    IndexOutOfRange { index: i64, vertex_count: usize },

    #[error("point cloud is empty")]
    EmptyCloud,

    #[error("non-finite coordinate at point {0}")]
    NonFinite(usize),

    #[error("zero extent: cannot normalize a degenerate cloud")]
    ZeroExtent,

    #[error("zero-area mesh")]
    ZeroArea,

    #[error("requested {requested} points but only {available} are available")]
    NotEnoughPoints { requested: usize, available: usize },

    #[error("degenerate cut: one side of the plane is empty")]
    DegenerateCut,

    #[error("insufficient density: part has {have} points, target {target} needs at least half")]
    InsufficientDensity { have: usize, target: usize },

    #[error("no usable cut after {0} attempts")]
    CutAttemptsExhausted(usize),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("step {t} out of range 1..={steps}")]
    StepOutOfRange { t: usize, steps: usize },

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("invalid descriptor: {0}")]
    InvalidDescriptor(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate denominator: ground-truth self-distance is {0:e}")]
    DegenerateDenominator(f64),

    #[error("empty group: {0}")]
    EmptyGroup(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("manifest: {0}")]
    Manifest(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
