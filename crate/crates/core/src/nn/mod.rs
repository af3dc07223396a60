//! Small reverse-mode autodiff engine over dense `f64` tensors.
//!
//! Provides the layers needed by the beamforming networks (conv1d, batch norm,
//! GELU, flatten, linear, softmax), a few differentiable kernels for the
//! sum-rate loss, the Adam optimizer, a named-tensor checkpoint container, and
//! finite-difference gradient checking.

mod adam;
mod checkpoint;
pub mod gradcheck;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, NamedTensor, CHECKPOINT_VERSION};
pub use tape::{BatchStats, GeluConstants, Gradients, Tape, Var, NORM_FLOOR};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("backward called before any forward pass was recorded")]
    BackwardBeforeForward,
    #[error("backward already ran on this tape; reset it first")]
    TapeConsumed,
    #[error("backward needs a scalar output, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
