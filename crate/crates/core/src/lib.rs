//! Noise-to-latent image codec.
//!
//! An image is represented by two tiny convolutional networks overfitted to
//! it. A seed expands into a fixed multi-scale Gaussian noise pyramid; the
//! Gaussian parameter predictor turns noise plus a positional embedding into
//! a per-element mean and scale, the latent is `mu + sigma * noise`, and the
//! synthesis network maps that latent to RGB. Only the seed and the quantized
//! network weights are stored.

pub mod autodiff;
pub mod bitstream;
mod buffer;
pub mod codec;
pub mod error;
pub mod eval;
pub mod image_io;
pub mod model;
pub mod noise;
pub mod tensor;
pub mod train;

pub use buffer::release_thread_pool;
pub use error::{Error, Result};
pub use tensor::{Shape, Tensor};
