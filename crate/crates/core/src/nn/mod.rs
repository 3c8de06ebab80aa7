//! Dense-network numerical engine.
//!
//! Row-major batches (`B × d`), weights stored `out × in`, ReLU on hidden
//! layers and raw logits on the output layer. Gradients are computed by
//! hand-written reverse mode and checked against [`finite_diff_grad`].

mod adam;
mod finite_diff;
mod loss;
mod mlp;
mod params;

pub use adam::{adam_step, AdamState, DEFAULT_BETA1, DEFAULT_BETA2, DEFAULT_EPSILON};
pub use finite_diff::{finite_diff_grad, relative_error, DEFAULT_FD_EPSILON};
pub use loss::{
    accuracy, argmax_rows, labels_to_onehot, softmax, softmax_cross_entropy,
    softmax_cross_entropy_labels,
};
pub(crate) use mlp::{affine, mask_relu, weight_grad};
pub use mlp::{mlp_backward, mlp_forward, relu_inplace, ForwardCache};
pub use params::{he_uniform, mlp_init, DenseLayerParams, MlpParams, ParamTensors};
