//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown dataset `{0}` (expected mnist, f-mnist or cifar10)")]
    UnknownDataset(String),

    #[error("dataset file {path}: {reason}")]
    DatasetFile { path: String, reason: String },

    #[error("invalid quantization config: {0}")]
    InvalidQuant(String),

    #[error("invalid threat model: {0}")]
    InvalidThreat(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite loss at epoch {epoch}, step {step} (training diverged)")]
    Diverged { epoch: usize, step: usize },

    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: String, reason: String },

    #[error("unknown architecture `{0}` (expected m-lenet, net-a or resnet18)")]
    UnknownArch(String),

    #[error("unknown attack `{0}`, valid ids: {1}")]
    UnknownAttack(String, String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
