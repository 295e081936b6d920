//! Convolutional primitives with forward kernels usable off-tape.
//! The [`crate::tape::Tape`] methods wrap the same kernels and add backward
//! rules.

pub mod conv;
pub mod deform;
pub mod elementwise;
pub mod loss;
pub mod resample;

pub use conv::{conv2d, conv_transpose2d, strided_conv_downsample, taps, KernelSpec};
pub use deform::{bilinear_sample, bilinear_sample_coord_grad, deform_conv2d, OffsetField};
pub use elementwise::{add, concat_channels, mul, relu, scale, sigmoid, sub};
pub use loss::cross_entropy_loss;
pub use resample::{global_avg_pool, upsample_nearest, upsample_nearest2x};
