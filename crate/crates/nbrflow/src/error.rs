use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(String),
    #[error("backward output must be a scalar, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),
    #[error("missing conditioning vector for a conditioned coupling layer")]
    MissingConditioning,
    #[error("normalization layer already initialized")]
    AlreadyInitialized,
    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("not enough same-class points: need {needed}, have {available}")]
    InsufficientClassMembers { needed: usize, available: usize },
    #[error("k={k} too large for dataset of size {n}")]
    KTooLarge { k: usize, n: usize },
    #[error("neighborhood table is empty")]
    EmptyTable,
    #[error("empty dataset")]
    EmptyData,
    #[error("estimator variant does not support this query: {0}")]
    VariantMismatch(String),
    #[error("non-finite loss (offending batch index {0})")]
    NonFiniteLoss(usize),
    #[error("checkpoint format version {found} unsupported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("neighborhood table digest {found} does not match recorded {expected}")]
    DigestMismatch { found: String, expected: String },
    #[error("corrupt checkpoint payload: {0}")]
    CorruptPayload(String),
    #[error("scores contain a single class only")]
    SingleClass,
    #[error("empty sample set")]
    EmptySet,
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
    #[error("bad neighborhood id {id} (table has {len} entries)")]
    BadNeighborhoodId { id: usize, len: usize },
    #[error("this model requires a neighborhood table")]
    MissingTable,
    #[error("this model requires class labels")]
    MissingLabels,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
