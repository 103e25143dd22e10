//! Deterministic projected belief networks.
//!
//! A D-PBN is an auto-encoder whose decoder reconstructs each layer's input
//! as the maximum-entropy conditional mean given the layer's output. The
//! reconstruction solves `W′ λ(W h) = z` for `h` by damped Newton iteration
//! and returns `λ(W h)`.
//!
//! - [`activation`]: MaxEnt activation functions `λ` and their derivatives.
//! - [`linop`]: dense and truncated-DCT linear maps.
//! - [`saddle`]: the Newton solver.
//! - [`network`]: layer stacks, encoding and both decoders.
//! - [`training`]: reconstruction-error training through the solver.
//! - [`data_io`]: MNIST ingestion, preprocessing and file formats.
//! - [`imgrecon`]: MaxEnt image reconstruction from DCT coefficients.
//! - [`selftest`]: quadrature-based checks of the numerics.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod activation;
pub mod data_io;
mod error;
pub mod imgrecon;
pub mod linop;
pub mod network;
pub mod saddle;
pub mod selftest;
pub mod training;

pub use activation::{ActivationKind, DataRange};
pub use error::{Error, Result};
pub use imgrecon::{reconstruct_image, ImageReconstruction};
pub use linop::{DenseMatrix, LinearMap, TruncatedDct2D};
pub use network::{init_params, Layer, Network, NetworkConfig};
pub use saddle::{solve_saddle, InnerSolver, SaddleOptions, SaddleResult};
pub use training::{Decoder, GradMode, Hyperparams, TrainReport};
