//! Edge-preserving pooling for convolutional networks, built on a small
//! CPU tensor core with reverse-mode automatic differentiation.
//!
//! The crate provides four interchangeable pooling layers — plain max/avg
//! pooling, anti-aliased blur pooling, LGCA (Laplacian-Gaussian concatenation
//! with channel attention) and WADCA (Haar wavelet approximate/detail
//! concatenation with channel attention) — together with desk-scale
//! classifier and convolutional-autoencoder builders, optimizers, dataset
//! tooling, checkpointing, and the robustness-evaluation protocols used to
//! compare the variants (accuracy under transform, classification
//! consistency, stability curves, noise robustness).

pub mod attention;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod filters;
pub mod gradcheck;
pub mod model;
pub mod optim;
pub mod pooling;
pub mod scalar;
pub mod tensor;
pub mod train;
pub mod wavelet;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::{backward, Parameter, Shape, Tape, Tensor};
