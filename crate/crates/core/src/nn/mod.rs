//! Minimal dense network engine: MLP forward/backward, regression losses and Adam.

mod adam;
mod loss;
mod mlp;

pub use adam::{adam_step, adam_update_slice, AdamConfig, AdamState};
pub use loss::{expectile_loss, expectile_weight, mse_loss};
pub use mlp::{mlp_backward, mlp_forward, mlp_init, Backward, ForwardTrace, Gradients, MlpParams};
