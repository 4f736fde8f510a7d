use thiserror::Error;

use crate::zorder::ZKey;

pub type Result<T, E = IceError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum IceError {
    #[error("attribute {attribute}: value {value} does not fit in {beta} bits")]
    Domain { attribute: usize, value: u64, beta: u8 },

    #[error("schema needs {bits} key bits, at most 128 are supported")]
    SchemaTooWide { bits: u32 },

    #[error("invalid schema: {0}")]
    InvalidSchema(String),

    #[error("key {0} is not present in the index")]
    KeyNotFound(ZKey),

    #[error("rank {rank} outside [1, {total}]")]
    RankOutOfRange { rank: u64, total: u64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("snapshot: {0}")]
    Snapshot(String),

    #[error("schema hash mismatch: expected {expected}, found {found}")]
    SchemaMismatch { expected: String, found: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl IceError {
    /// Short machine-readable tag used in CLI error output.
    pub fn kind(&self) -> &'static str {
        match self {
            IceError::Domain { .. } => "domain",
            IceError::SchemaTooWide { .. } => "capacity",
            IceError::InvalidSchema(_) => "schema",
            IceError::KeyNotFound(_) => "not_found",
            IceError::RankOutOfRange { .. } => "range",
            IceError::Precondition(_) => "precondition",
            IceError::InvalidArgument(_) => "argument",
            IceError::Parse { .. } => "parse",
            IceError::Snapshot(_) => "snapshot",
            IceError::SchemaMismatch { .. } => "schema_mismatch",
            IceError::Io(_) => "io",
            IceError::Json(_) => "json",
            IceError::Csv(_) => "csv",
        }
    }
}
