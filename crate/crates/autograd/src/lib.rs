//! Reverse-mode differentiation engine for rank-4 f32 tensors on CPU.
//!
//! Covers exactly the primitives a landmark-driven reenactment generator
//! needs: convolution, channel statistics + adaptive denormalization,
//! displacement-field sampling, pixel shuffle, bilinear resize, spectral
//! weight normalization, the usual activations, and a bias-corrected Adam.
//!
//! All results are deterministic for a fixed input regardless of thread
//! count: internal parallelism partitions work at fixed boundaries and
//! reductions accumulate sequentially in f64.

mod conv;
mod error;
mod gemm;
mod norm;
mod ops_mod;
mod param;
mod resample;
mod shape;
mod tensor;

pub mod gradcheck;
pub mod init;
pub mod optim;

pub use error::{Error, Result};
pub use shape::Shape;
pub use tensor::Tensor;

pub use conv::conv2d;
pub use norm::{adaptive_channel_norm, adaptive_denormalize, channel_stats, ChannelStats, NORM_EPS};
pub use param::{spectral_normalize, Parameter};
pub use resample::{bilinear_resize, grid_sample, pixel_shuffle, pixel_unshuffle};

pub mod ops {
    pub use crate::ops_mod::*;
}
