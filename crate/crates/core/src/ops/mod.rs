//! Differentiable spatial primitives with explicit forward and backward passes.

mod conv;
pub(crate) mod gemm;
mod resample;
mod window;

pub use conv::{
    conv2d_backward, conv2d_forward, conv_output_shape, transpose_conv_backward,
    transpose_conv_forward, transpose_output_shape, ConvSpec,
};
pub(crate) use conv::conv2d_backward_impl;
pub use resample::{avg_pool2, avg_pool2_backward, bilinear_upsample, bilinear_upsample_backward};
