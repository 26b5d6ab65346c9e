//! Dense tensors, a small layer library with reverse-mode gradients,
//! RMSprop and JSON checkpoints.

mod checkpoint;
mod gradcheck;
pub mod layers;
mod network;
mod optim;
mod scalar;
mod tensor;

pub use checkpoint::{Checkpoint, NamedTensor};
pub use gradcheck::{grad_check, GradCheckReport, FD_STEP};
pub use layers::{chain_output_shape, conv_q_chain, mlp_q_chain, parameter_count, with_sigmoid_heads, LayerSpec};
pub use network::{Network, NetworkParams, Trace};
pub use optim::{lr_schedule, rmsprop_step, OptState, RMSPROP_ALPHA, RMSPROP_EPS};
pub use scalar::{Precision, Real};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("invalid tensor shape {0:?}")]
    InvalidShape(Vec<usize>),
    #[error("shape {shape:?} needs {} elements, got {len}", shape.iter().product::<usize>())]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("shape mismatch{}: expected {expected:?}, found {found:?}", layer.map(|l| format!(" at layer {l}")).unwrap_or_default())]
    ShapeMismatch {
        layer: Option<usize>,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("layer {layer}: {reason}")]
    InvalidLayer { layer: usize, reason: String },
    #[error("batch is empty")]
    EmptyBatch,
    #[error("trace does not match network: {0}")]
    TraceMismatch(String),
    #[error("parameters do not match: {0}")]
    ParamsMismatch(String),
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
