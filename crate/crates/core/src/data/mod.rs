//! Synthetic and image-based multi-task datasets split into environments.

mod env;
pub mod export;
pub mod idx;
mod labels;
mod mnist;
mod sem;

pub use env::{split_environments, tag_environments, DatasetSplits, EnvironmentBatch};
pub use idx::{load_idx, IdxImages};
pub use labels::Labels;
pub use mnist::{compose_from, compose_multimnist, partition_pairs, MnistPairSpec};
pub use sem::{gen_multisem, SemSpec, SplitParams};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic { expected: u32, found: u32 },
    #[error("file truncated: needed {expected} bytes, found {got}")]
    Truncated { expected: usize, got: usize },
    #[error("{images} images but {labels} labels")]
    DimensionMismatch { images: usize, labels: usize },
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("digit {class}: need {needed} images, have {available}")]
    InsufficientDigits { class: u8, needed: usize, available: usize },
    #[error("invalid dataset spec: {0}")]
    InvalidSpec(String),
    #[error("format: {0}")]
    Format(String),
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, DataError>;
