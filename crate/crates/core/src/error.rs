use alloc::string::String;

/// Errors raised by the core algorithms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("band `{band}` value {value} outside the legal domain of unit {unit}")]
    Domain {
        band: String,
        unit: &'static str,
        value: f64,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("missing label for cell {cell_id} cluster {cluster_id}")]
    MissingLabel { cell_id: u32, cluster_id: u32 },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
