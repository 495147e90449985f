//! Numerical substrate: tensors, layers with manual gradients, Adam, and a
//! finite-difference gradient checker.

mod adam;
mod gradcheck;
mod layers;
mod rng;
mod tensor;

pub use adam::{adam_step, AdamConfig, Param, ParamStore};
pub use gradcheck::{finite_diff_check, GradCheckOptions, GradCheckReport, GradSample, Probe};
pub use layers::{
    conv2d_backward, conv2d_forward, conv_out_extent, dense_backward, dense_forward, ConvGrads,
    DenseGrads,
};
pub use rng::Rng;
pub use tensor::Tensor;
