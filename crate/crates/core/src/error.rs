use thiserror::Error;

/// Errors raised anywhere in the engine.
#[derive(Error, Debug)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("maclaurin domain violated: |y| = {value} > 1 (is a bounded activation missing upstream?)")]
    Domain { value: f64 },
    #[error("invalid layer or network spec: {0}")]
    InvalidSpec(String),
    #[error("pool operator applied to an empty term list")]
    EmptyPool,
    #[error("order index {q} outside 1..={order}")]
    OrderOutOfRange { q: usize, order: usize },
    #[error("forward cache is stale or missing: {0}")]
    StaleCache(String),
    #[error("SNR undefined: reference map has zero variance")]
    UndefinedSnr,
    #[error("mask is not binary: found value {0}")]
    NonBinaryMask(f64),
    #[error("corpus of {size} samples is too small for {folds} folds")]
    CorpusTooSmall { size: usize, folds: usize },
    #[error("non-finite gradient for layer {layer} {param}[{index}]")]
    NonFiniteGradient {
        layer: usize,
        param: &'static str,
        index: usize,
    },
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("invalid dataset: {0}")]
    Dataset(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
