//! Differentiable numerical core: tensors, a per-loss recorded tape, dense
//! feedforward layers and the Adam optimizer.

mod adam;
mod graph;
mod mlp;
mod params;
mod tensor;

pub use adam::{adam_step, lr_schedule, AdamState};
pub use graph::{log_sum_exp, sigmoid, DetachedValues, Graph, Var};
pub use mlp::{mlp_forward, Activation, MlpParams};
pub use params::{Gradients, ParamId, ParamStore};
pub use tensor::Tensor;
