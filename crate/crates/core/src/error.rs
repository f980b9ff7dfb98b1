use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] io::Error),

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: u64, message: String },

    #[error("input point cloud is empty")]
    EmptyInput,

    #[error("point cloud has zero extent; pass an explicit quantization step")]
    DegenerateExtent,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("coordinate {coord} out of range for depth {depth}")]
    OutOfBounds { coord: u32, depth: u8 },

    #[error("structural decode error at node {position}: {message}")]
    Structure { position: usize, message: String },

    #[error("index {index} out of range for {table} table of size {size}")]
    IndexOutOfRange {
        table: &'static str,
        index: usize,
        size: usize,
    },

    #[error("invalid occupancy target {0}; symbols are 1..=255")]
    InvalidTarget(u32),

    #[error("symbol has zero frequency")]
    ZeroFrequency,

    #[error("model mismatch: {0}")]
    ModelMismatch(String),

    #[error("corrupt bitstream at node {position}: {message}")]
    Corrupt { position: usize, message: String },

    #[error("invalid bitstream: {0}")]
    Format(String),

    #[error("training diverged at epoch {epoch}, step {step}: loss {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
