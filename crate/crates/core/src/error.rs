use thiserror::Error;

/// Errors raised across the pose-estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("degenerate 6D rotation: {0}")]
    DegenerateRotation(&'static str),
    #[error("point {index} lies behind the camera (z = {depth})")]
    BehindCamera { index: usize, depth: f64 },
    #[error("invalid ground truth: {0}")]
    InvalidGroundTruth(&'static str),
    #[error("empty set: {0}")]
    EmptySet(&'static str),
    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },
    #[error("invalid bounding box: w = {w}, h = {h}")]
    InvalidBox { w: f64, h: f64 },
    #[error("infeasible configuration: {0}")]
    Infeasible(String),
    #[error("stale cache: {0}")]
    StaleCache(&'static str),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
