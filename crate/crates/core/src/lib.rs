//! Translation variant convolution (TVConv).
//!
//! A TVConv layer owns a small learnable affinity tensor `A` (`c_A x h x w`)
//! and a weight-generating block that maps `A` to one depthwise filter per
//! spatial position. After training the generated weight field is cached and
//! inference costs exactly as much as a depthwise convolution.
//!
//! Modules:
//! - [`tensor`]: dense tensors, forward kernels and the `TVTENSOR` format
//! - [`grad`]: tape-based reverse-mode gradients and finite-difference checks
//! - [`tvconv`]: affinity maps, weight generation, apply, freeze/cache
//! - [`cost`]: analytic MACs / params / activation accounting
//! - [`data`]: synthetic layout datasets and affine perturbations
//! - [`train`]: models, SGD, training loop and ablation runners

pub mod config;
pub mod cost;
pub mod data;
pub mod error;
pub mod grad;
pub mod report;
pub mod seed;
pub mod tensor;
pub mod train;
pub mod tvconv;

pub use error::{Error, Result};
pub use tensor::{DType, Element, Storable, Tensor};
