//! Error type shared by all modules.

use crate::store::Scheme;

pub type Result<T> = std::result::Result<T, QpalError>;

#[derive(Debug, thiserror::Error)]
pub enum QpalError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated payload: needed {needed} bytes, {available} available")]
    TruncatedPayload { needed: u64, available: u64 },

    #[error("dimension overflow or invalid dimensions: {rows} x {cols}")]
    DimensionOverflow { rows: u64, cols: u64 },

    #[error("non-finite value at index {0}")]
    NonFiniteData(usize),

    #[error("unsupported width: {bits_x4} quarter-bits for scheme {scheme:?}")]
    UnsupportedWidth { scheme: Scheme, bits_x4: u8 },

    #[error("corrupt container: {0}")]
    CorruptContainer(String),

    #[error("input dimension {0} is not a power of two")]
    NonPowerOfTwoDim(usize),

    #[error("column {0} is identically zero")]
    ZeroColumn(usize),

    #[error("codebook/config mismatch: {0}")]
    ConfigMismatch(String),

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("partition mismatch: {0}")]
    PartitionMismatch(String),

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("Hessian is not PSD: D[{index}] = {value}")]
    NonPsdHessian { index: usize, value: f64 },

    #[error("infeasible bit budget: {0}")]
    InfeasibleBudget(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("missing cost entry: {0}")]
    MissingCost(String),

    #[error("degenerate sensitivity fit: {0}")]
    DegenerateFit(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
