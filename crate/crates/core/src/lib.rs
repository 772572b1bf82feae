//! Fractional-bit quantization of Gaussianized weight matrices.
//!
//! The crate covers the full desk-scale pipeline:
//!
//! - [`tensor`] / [`store`]: dense matrices, quantized containers, codebook
//!   files, and their bit-exact on-disk formats,
//! - [`incoherence`]: randomized Hadamard rotation with per-output-channel
//!   scaling and its inverse,
//! - [`codebooks`]: Gaussian-optimized codebook construction (1D/2D k-means
//!   LUTs and the hybrid trellis LUT),
//! - [`trellis`] / [`engines`]: round-to-nearest and Viterbi quantization
//!   kernels, bit packing, and the block-LDLQ data-aware wrapper,
//! - [`rate`]: distortion measurement, the Gaussian distortion-rate bound,
//!   closed-form optimal fractional bit allocation, and the optimality-gap
//!   decomposition,
//! - [`mckp`] / [`fusion`]: exact memory/resource-constrained mixed-scheme
//!   solvers and the fusion-aware variant built on per-block Pareto
//!   frontiers,
//! - [`sensitivity`]: layer sensitivity coefficients from noise-injection
//!   measurements.
//!
//! Heavy inner loops (clustering, trellis encoding, batch RTN) run
//! data-parallel through [`exec`] when the `parallel` feature is enabled
//! (default) and fall back to equivalent sequential code otherwise. Both
//! paths reduce in a fixed chunk order, so results are bit-identical at any
//! thread count.

pub mod bitpack;
pub mod codebooks;
pub mod engines;
pub mod error;
pub mod exec;
pub mod fusion;
pub mod incoherence;
pub(crate) mod kmeans;
pub mod ldlq;
pub mod mckp;
pub mod rate;
pub mod rng;
pub mod sensitivity;
pub mod store;
pub mod tensor;
pub mod trellis;

pub use error::{QpalError, Result};
pub use store::Scheme;
pub use tensor::DenseMatrix;
