//! Error type shared across the crate.

use thiserror::Error;

/// Unified error for tensor, layer, model, training, and I/O failures.
#[derive(Debug, Error)]
pub enum Error {
    /// A shape with a zero extent or an empty extent list.
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    /// Two operands (or an operand and a spec) disagree on shape.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// Reduction axis outside the tensor rank.
    #[error("axis {axis} out of range for rank {rank}")]
    InvalidAxis { axis: usize, rank: usize },

    /// Argument outside its mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// NaN or infinity where a finite value is required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Tape record does not match the layer consuming it.
    #[error("tape error: {0}")]
    Tape(String),

    /// Model construction produced inconsistent layer shapes.
    #[error("build error: {0}")]
    Build(String),

    /// Dataset split could not be performed.
    #[error("split error: {0}")]
    Split(String),

    /// Training aborted (e.g. divergence).
    #[error("training error: {0}")]
    Train(String),

    /// A caller violated an API contract (e.g. unnormalized heatmap).
    #[error("contract error: {0}")]
    Contract(String),

    /// Config file could not be parsed.
    #[error("config error: {0}")]
    Config(String),

    /// Image file could not be decoded.
    #[error("decode error: {0}")]
    Decode(String),

    /// Weight file failed CRC or structural validation.
    #[error("corrupt weight file: {0}")]
    Corrupt(String),

    /// Weight file does not match the target model.
    #[error("incompatible weight file: {0}")]
    Incompatible(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
