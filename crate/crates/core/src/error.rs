use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("zero-norm vector at index {index}")]
    ZeroVector { index: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid norm order p = {0} (need p >= 1)")]
    InvalidNorm(f64),

    #[error("temperature trigger already fired")]
    AlreadyFired,

    #[error("invalid divergence matrix: {0}")]
    InvalidMatrix(String),

    #[error("label {label} outside [0, {classes})")]
    InvalidLabel { label: usize, classes: usize },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("need at least {needed} classes, have {available}")]
    InsufficientClasses { needed: usize, available: usize },

    #[error("degenerate client allocation: {0}")]
    DegenerateAllocation(String),

    #[error("invalid k = {k} for {n} points")]
    InvalidK { k: usize, n: usize },

    #[error("invalid min cluster size {0} (need >= 2)")]
    InvalidMinClusterSize(usize),

    #[error("partitions cover different client sets ({left} vs {right})")]
    MismatchedClients { left: usize, right: usize },

    #[error("empty curve")]
    EmptyCurve,

    #[error("empty evaluation set for cluster {cluster}")]
    EmptyEvaluationSet { cluster: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("hash mismatch for {file}: manifest {expected}, on disk {found}")]
    HashMismatch {
        file: String,
        expected: String,
        found: String,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}
