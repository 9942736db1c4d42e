use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("chain `{0}` is already complete")]
    StoreConflict(String),

    #[error("integrity error: chain `{chain_id}` artifact g={g} does not match its recorded hash")]
    Integrity { chain_id: String, g: u32 },

    #[error("mapping {direction} is not defined for {start} chains")]
    MappingMismatch { direction: String, start: String },

    #[error("backbone `{backbone}` cannot embed the modalities required by {direction}")]
    BackboneMismatch { direction: String, backbone: String },

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("cosine of a zero vector is undefined")]
    ZeroVector,

    #[error("chain `{chain_id}` has no artifact for comparison index k={k}")]
    IncompleteChain { chain_id: String, k: usize },

    #[error("similarity series is empty")]
    EmptySeries,

    #[error("mapping `{0}` listed more than once")]
    DuplicateMapping(String),

    #[error("power-law curve is undefined at k={0} (k must be >= 1)")]
    Domain(f64),

    #[error("power-law fit needs at least 3 points, got {0}")]
    TooFewPoints(usize),

    #[error("cannot average an empty list")]
    EmptyList,

    #[error("box covers {0} px, at least 4 are required for color classification")]
    DegenerateBox(u64),

    #[error("no prompts scored for task `{0}`")]
    MissingTask(String),

    #[error("source {source_name} has {available} entries, {required} required")]
    InsufficientSource { source_name: String, available: usize, required: usize },

    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },

    #[error("duplicate id `{0}`")]
    DuplicateId(String),

    #[error("missing metrics file {}", .0.display())]
    MissingMetrics(PathBuf),

    #[error("invalid value: {0}")]
    Invalid(String),

    #[error("io error at {}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Whether a chain step that hit this error can be retried later by resuming.
    pub fn is_transient(&self) -> bool {
        matches!(self, Error::BackendUnavailable(_))
    }
}
