use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid label value {value} at voxel {index}")]
    InvalidLabel { value: u8, index: usize },

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("window {row_offset},{col_offset} ({out_h}x{out_w}) does not fit {height}x{width}")]
    WindowOutOfBounds {
        row_offset: usize,
        col_offset: usize,
        out_h: usize,
        out_w: usize,
        height: usize,
        width: usize,
    },

    #[error("channel mismatch: expected {expected}, got {actual}")]
    ChannelMismatch { expected: usize, actual: usize },

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("batch-norm running statistics are uninitialized (no training update yet)")]
    UninitializedStats,

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("empty training set after gating")]
    EmptyTrainingSet,

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
