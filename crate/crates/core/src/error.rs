use std::io;

use thiserror::Error;

/// Errors produced by the few-shot engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("bad magic {found:?}, expected \"FSF1\"")]
    BadMagic { found: [u8; 4] },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated payload: {0}")]
    Truncated(String),

    #[error("non-finite feature value in record {record} at index {index}")]
    NonFinite { record: usize, index: usize },

    #[error("malformed file: {0}")]
    Malformed(String),

    #[error("invalid feature store: {0}")]
    InvalidStore(String),

    #[error("class names of store {store:?} differ from store {reference:?}")]
    ClassMismatch { reference: String, store: String },

    #[error("key (class {class_index}, image {image_id}) is missing from store {store:?}")]
    MissingKey {
        class_index: u32,
        image_id: u32,
        store: String,
    },

    #[error("joined dataset is empty: no key is present in every store")]
    EmptyJoin,

    #[error("feature dimension {dim} is not divisible by {side}x{side}")]
    Indivisible { dim: usize, side: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("insufficient data: {0}")]
    Data(String),

    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },

    #[error("activation cache does not match this batch or parameter state: {0}")]
    StaleCache(String),

    #[error("t-SNE needs at least 4 points, got {0}")]
    TooFewPoints(usize),

    #[error("perplexity {perplexity} is infeasible for {count} points")]
    InfeasiblePerplexity { perplexity: f64, count: usize },

    #[error("degenerate affinities: all input points coincide")]
    DegenerateAffinities,
}

/// Coarse failure classes, used by the CLI to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Io,
    Config,
    Data,
    Incompatible,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io(_) => ErrorKind::Io,
            Error::Config(_) => ErrorKind::Config,
            Error::Indivisible { .. } => ErrorKind::Incompatible,
            _ => ErrorKind::Data,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
