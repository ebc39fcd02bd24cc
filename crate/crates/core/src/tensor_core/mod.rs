//! Minimal dense tensors with reverse-mode differentiation for the layer
//! primitives the multimodal classifier needs.

mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use gradcheck::{grad_check, relative_error, Evaluation, GradCheckReport, ParamCheck, RELATIVE_FLOOR};
pub use graph::{
    conv2d_forward, conv_output_len, linear_forward, maxpool2d_forward,
    softmax_cross_entropy_forward, Graph, Var,
};
pub use params::{sgd_step, ParamSet};
pub use tensor::Tensor;
