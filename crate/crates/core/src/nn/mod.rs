//! Layers with analytic forward/backward, the Adam optimizer and gradient checks.

pub mod activation;
pub mod adam;
pub mod batchnorm;
pub mod concat;
pub mod conv;
pub mod gradcheck;
pub mod init;
pub mod pool;

pub use activation::{leaky_relu, leaky_relu_backward, relu};
pub use adam::{AdamConfig, AdamState};
pub use batchnorm::{BatchNormCache, BatchNormGrads, BatchNormParams, Mode, RunningStats};
pub use concat::{concat_channels, split_channels};
pub use conv::{
    conv2d, conv2d_backward, conv2d_backward_input, conv_transpose2d, conv_transpose2d_backward,
    ConvGrads, ConvParams,
};
pub use gradcheck::{grad_check, layer_suite, GradCheckReport};
pub use pool::{maxpool2d, maxpool2d_backward};
