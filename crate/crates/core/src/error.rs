use std::io;

use thiserror::Error;

/// Errors produced by the convolution engine and its fixture I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("bad magic: expected `BTSR`, found {found:?}")]
    BadMagic { found: [u8; 4] },

    #[error("dimension overflow: {channels}x{height}x{width} does not fit in memory")]
    DimOverflow {
        channels: u32,
        height: u32,
        width: u32,
    },

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("non-finite value {value} at index {index}")]
    NonFinite { index: usize, value: f32 },

    #[error("data length {actual} does not match shape (expected {expected})")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("tile geometry mismatch: {0}")]
    GeometryMismatch(String),

    #[error("channel count mismatch: expected {expected}, got {actual}")]
    ChannelMismatch { expected: usize, actual: usize },

    #[error("inconsistent overlap at pixel ({y}, {x}) between neighbouring tiles")]
    InconsistentOverlap { y: usize, x: usize },

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("oracle gate failed: {0}")]
    OracleGate(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
