//! Crate-wide error type.

use std::path::PathBuf;

/// Errors raised by tensors, models, protocol engines and the experiment runner.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Two operands (or an operand and a model slot) disagree on shape.
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    /// An operation produced or received a NaN or infinity.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// A configuration value violates its documented constraints.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A value lies outside the range an operation accepts.
    #[error("{what} out of range: {value}")]
    OutOfRange { what: &'static str, value: f64 },

    /// Training produced a non-finite loss.
    #[error("training diverged in stage `{stage}` at step {step} (loss {loss})")]
    Divergence {
        stage: &'static str,
        step: usize,
        loss: f64,
    },

    /// A statistic is undefined because its input has zero variance or norm.
    #[error("degenerate input: {0}")]
    Degenerate(&'static str),

    /// A pipeline stage was requested before the stage it depends on.
    #[error("missing checkpoint for stage `{stage}`: {path}")]
    MissingCheckpoint { stage: &'static str, path: PathBuf },

    /// A checkpoint file is malformed.
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}
