//! Scalable compression of neural-network weights.
//!
//! The pipeline has three stages:
//!
//! 1. [`hquant`] — hierarchical residual quantization: every network layer's
//!    weights become a stack of 1-bit stages (two centroids + a bit-plane of
//!    cluster indices per stage), so the representation can be cut to any
//!    stage depth without re-clustering.
//! 2. [`allocator`] — given a total bit budget, pick the per-layer stage
//!    depths that minimize validation cross-entropy: backward greedy search,
//!    plus exhaustive grid and random-search baselines.
//! 3. [`finetune`] — gradient descent on the shared centroid values with the
//!    cluster assignments frozen, recovering accuracy lost to quantization.
//!
//! [`bitstream`] serializes stage stacks into a prefix-truncatable container
//! and computes incremental upgrade deltas, and [`nn`] is the small tensor /
//! network engine behind the cost oracle and fine-tuning.
//!
//! All numeric kernels are generic over the scalar type (see [`scalar::Real`]);
//! the aliases at the crate root pin the pipeline to `f64`, which is what the
//! command-line tools and file formats use. On-disk weights and centroids are
//! 32-bit little-endian IEEE-754 regardless of the in-memory scalar.

pub mod allocator;
pub mod bits;
pub mod bitstream;
pub mod data;
pub mod error;
pub mod finetune;
pub mod hquant;
pub mod model_io;
pub mod nn;
pub mod scalar;
pub mod tensor;
pub mod toy;

pub use error::{Error, Result};

/// Stored precision of weights and centroids, in bits (single-precision floats).
pub const STORED_BITS: u32 = 32;

/// Size convention used everywhere a budget or report mentions KB/MB.
pub const BYTES_PER_KB: u64 = 1024;

// Concrete instantiations used by the pipeline: all in-memory arithmetic in
// 64-bit reals.
pub type Tensor = tensor::Tensor<f64>;
pub type Layer = nn::Layer<f64>;
pub type NetworkModel = nn::NetworkModel<f64>;
pub type Dataset = data::Dataset<f64>;
pub type Stage = hquant::Stage<f64>;
pub type StageStack = hquant::StageStack<f64>;
