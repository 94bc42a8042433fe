//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Two tensors disagree on an axis where the operation requires agreement.
    #[error("{op}: {axis} mismatch ({detail})")]
    ShapeMismatch {
        op: &'static str,
        axis: &'static str,
        detail: String,
    },

    /// An argument is outside the operation's domain.
    #[error("{op}: {detail}")]
    InvalidArgument { op: &'static str, detail: String },

    /// Operation mixed tensors recorded on different tapes.
    #[error("{op}: inputs are tracked on different tapes")]
    TapeMismatch { op: &'static str },

    /// `backward` was called on a tape that has already been consumed.
    #[error("backward: tape already consumed; rebuild the graph before differentiating again")]
    TapeConsumed,

    /// `backward` needs a scalar, tracked loss.
    #[error("backward: {0}")]
    BadLoss(String),

    #[error("config: {0}")]
    Config(String),

    #[error("dataset: {0}")]
    Data(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    /// Training diverged; carries the epoch/batch where the loss left the reals.
    #[error("training aborted: non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
