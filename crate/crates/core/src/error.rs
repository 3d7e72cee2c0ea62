use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("box {index} {bbox:?} is outside the {height}x{width} frame")]
    BoxOutOfBounds {
        index: usize,
        bbox: [i64; 4],
        height: usize,
        width: usize,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("token location {location} out of range for {len} tokens")]
    LocationOutOfRange { location: usize, len: usize },

    #[error("masked frame before any full frame")]
    Uninitialized,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{0} out of range")]
    OutOfRange(String),

    #[error("empty sequence")]
    EmptySequence,

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
