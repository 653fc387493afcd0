use thiserror::Error;

use crate::unistg::ServiceError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("invalid time span: {0}")]
    InvalidSpan(String),

    #[error("invalid frame grid: {0}")]
    InvalidGrid(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("prediction ids do not match ground truth (missing: {missing:?}, duplicate: {duplicate:?}, unexpected: {unexpected:?})")]
    IdMismatch {
        missing: Vec<String>,
        duplicate: Vec<String>,
        unexpected: Vec<String>,
    },

    #[error("frame grid mismatch for sample {id}: {reason}")]
    GridMismatch { id: String, reason: String },

    #[error("length mismatch: {left} predictions vs {right} references")]
    LengthMismatch { left: usize, right: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("tube frame ranges differ: [{pred_start}, {pred_end}] vs [{gt_start}, {gt_end}]")]
    FrameRangeMismatch {
        pred_start: usize,
        pred_end: usize,
        gt_start: usize,
        gt_end: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("missing features for frame {0}")]
    MissingFrame(usize),

    #[error("parse error at byte {position}: {message}")]
    Parse { position: usize, message: String },

    #[error("{path}:{line}: {message}")]
    Jsonl {
        path: String,
        line: usize,
        message: String,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Service(#[from] ServiceError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
