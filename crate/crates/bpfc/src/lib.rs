//! Bit Plane Feature Consistency (BPFC) training and robustness evaluation.
//!
//! The crate is organized around the stages of a robustness experiment:
//!
//! - [`data`] — dataset ingestion (MNIST / Fashion-MNIST / CIFAR-10) and
//!   canonical train/val/test splits,
//! - [`quant`] — the stochastic bit-plane coarsening pipeline and its
//!   ablation variants,
//! - [`nn`] — a small CPU tensor/layer library with explicit backprop,
//! - [`models`] — the classifier architectures (M-LeNet, Net-A, ResNet-18)
//!   and checkpoint I/O,
//! - [`train`] — BPFC-regularized training plus the normal / FGSM-AT /
//!   PGD-AT baselines,
//! - [`attacks`] — the attack battery (FGSM, I-FGSM, PGD, MI-FGSM,
//!   DeepFool, C&W, SPSA, random noise, adaptive),
//! - [`eval`] — white-box / black-box suites, restart studies, sanity
//!   checks and accuracy-vs-epsilon curves.
//!
//! All numerics are generic over the scalar type via [`Float`]; training
//! runs in `f32`, gradient checks in the tests use `f64`.

pub mod attacks;
pub mod data;
pub mod error;
pub mod eval;
pub mod float;
pub mod models;
pub mod nn;
pub mod quant;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
pub use float::Float;

// Concrete aliases for the common case: f32 for trained models and
// attack batches, f64 where tests need tight finite-difference checks.
pub type Network32 = nn::Network<f32>;
pub type Network64 = nn::Network<f64>;
pub type ImageBatch32 = data::ImageBatch<f32>;
pub type ImageBatch64 = data::ImageBatch<f64>;
