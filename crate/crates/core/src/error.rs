use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("scan order {kind} requires {requirement}, got {height}x{width}")]
    ScanShape {
        kind: &'static str,
        requirement: &'static str,
        height: usize,
        width: usize,
    },
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("not a permutation of 0..{0}")]
    NotPermutation(usize),
    #[error("epoch {epoch} outside [0, {total}]")]
    EpochOutOfRange { epoch: f64, total: usize },
    #[error("invalid anneal schedule: need 0 <= start ({start}) <= end ({end}) <= total ({total})")]
    InvalidSchedule { start: usize, end: usize, total: usize },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("grid of {bits:.1} bits exceeds the exact-oracle bound of {limit} bits")]
    Intractable { bits: f64, limit: u32 },
    #[error("token {token} out of vocabulary of size {vocab}")]
    TokenOutOfRange { token: usize, vocab: usize },
    #[error("class label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("corrupt {what}: {field}")]
    Corrupt { what: &'static str, field: String },
    #[error("fingerprint mismatch: file has {found:#018x}, spec has {expected:#018x}")]
    FingerprintMismatch { expected: u64, found: u64 },
    #[error("non-finite gradient in tensor {0}")]
    NonFiniteGradient(String),
    #[error("kv cache holds {cached} positions but {expected} were expected")]
    CacheMismatch { cached: usize, expected: usize },
    #[error("positional tables were merged; only raster order is supported")]
    MergedNonRaster,
    #[error("tensor {name}: expected shape {expected:?}, found {found:?}")]
    TensorShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("missing tensor {0}")]
    MissingTensor(String),
    #[error("unexpected tensor {0}")]
    UnexpectedTensor(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
