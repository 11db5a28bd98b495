//! Small reverse-mode neural network library: dense, convolution,
//! transposed convolution, batch norm and a few activations over `f64`.

mod adam;
mod gradcheck;
mod kernels;
mod layers;
mod loss;
mod network;
mod tensor;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adam::AdamState;
pub use gradcheck::{finite_diff_check, relative_error, GradCheckReport, REL_ERROR_FLOOR};
pub use layers::{Layer, LayerSpec, RunningStats};
pub use loss::{loss_kl, loss_mse};
pub use network::{Activations, Gradients, Network, CHECKPOINT_VERSION};
pub use tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Training,
    Inference,
}

#[derive(Debug, Error)]
pub enum NnError {
    #[error("layer {layer}: expected input shape {expected:?}, got {got:?}")]
    ShapeMismatch {
        layer: usize,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("layer {layer}: {reason}")]
    InvalidLayer { layer: usize, reason: String },
    #[error("activations do not match network: {0}")]
    ActivationMismatch(String),
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),
    #[error("loss: {0}")]
    Loss(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
