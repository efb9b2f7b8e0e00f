//! Minimal CPU neural-network kernel: conv/pool/dense/batch-norm layers,
//! softmax cross-entropy, SGD, and finite-difference gradient checking.

pub mod batchnorm;
pub mod conv;
pub mod dense;
pub mod gradcheck;
pub mod init;
pub mod linalg;
pub mod loss;
pub mod network;
pub mod pool;
pub mod sgd;

pub use linalg::init_blas_tuning;
pub use network::{Act, GradSlot, GradStore, Layer, LayerCache, Network};
pub use sgd::Sgd;
