//! Dense feed-forward network, its training primitives, and checkpointing.
//!
//! Everything here is CPU-only f32 with f64 accumulation for reductions.
//! Models are value types: training steps return new models rather than
//! mutating in place, which keeps the round loop easy to reason about.

mod checkpoint;
mod loss;
mod model;
mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use loss::{
    cross_entropy_backward, cross_entropy_loss, input_gradient, kl_divergence_backward,
    kl_divergence_loss, sgd_step, softmax_temperature, GradVector,
};
pub use model::{init_mlp, param_count, MlpModel, ParamVector};
pub use tensor::Tensor;
