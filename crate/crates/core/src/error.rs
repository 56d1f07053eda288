use crate::geometry::BrickPose;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An action produced a pose that overlaps an existing brick or leaves the
    /// world bounds.
    #[error("invalid action: pose {0:?} overlaps or is out of bounds")]
    InvalidAction(BrickPose),

    /// Every (pivot, offset) pair is masked out; the episode cannot continue.
    #[error("no valid action available")]
    NoValidAction,

    /// A target with no occupied cells.
    #[error("target is empty")]
    EmptyTarget,

    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed input file; `offset` is the byte position where parsing failed.
    #[error("parse error at byte {offset}: {msg}")]
    Parse { msg: String, offset: usize },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
