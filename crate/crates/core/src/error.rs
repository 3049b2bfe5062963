use bitstorm_forge::ForgeError;
use bitstorm_isa::IsaError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, CoreError>;

#[derive(Error, Debug)]
pub enum CoreError {
    #[error("no admissible fault sites under the given filters")]
    EmptySiteSpace,

    #[error("cannot draw {wanted} distinct sites from {available}")]
    NotEnoughSites { wanted: u64, available: u64 },

    #[error("invalid fault spec: {0}")]
    InvalidSpec(String),

    #[error("trace does not belong to this program")]
    MismatchedTrace,

    #[error("no records")]
    EmptyRecords,

    #[error("records with {0} faults per trial where single-fault records are required")]
    MixedFaultCount(u32),

    #[error("group {0} has unmeasured opcodes but no measured member")]
    UncoveredGroup(String),

    #[error("opcode weights sum to {0}, not 1")]
    WeightsNotNormalized(f64),

    #[error("site space of {size} exceeds the cap of {cap}")]
    SpaceTooLarge { size: u64, cap: u64 },

    #[error("estimate and exact result describe different campaigns: {0}")]
    SpecMismatch(String),

    #[error("{line}:{col}: {msg}")]
    Parse { line: usize, col: usize, msg: String },

    #[error("invalid value for `{field}`: {msg}")]
    Validation { field: String, msg: String },

    #[error("malformed record: {0}")]
    Record(String),

    #[error(transparent)]
    Forge(#[from] ForgeError),

    #[error(transparent)]
    Isa(#[from] IsaError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
