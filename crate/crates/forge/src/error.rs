use bitstorm_isa::{IsaError, Trap};
use thiserror::Error;

pub type Result<T> = std::result::Result<T, ForgeError>;

#[derive(Error, Debug)]
pub enum ForgeError {
    #[error("invalid model configuration: {0}")]
    ConfigInvalid(String),

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("program too large: {0}")]
    ProgramTooLarge(String),

    #[error("fault-free run trapped: {} at pc {} (detail {:#x})", .0.cause, .0.pc, .0.detail)]
    GoldenTrapped(Trap),

    #[error("malformed golden container: {0}")]
    Container(String),

    #[error(transparent)]
    Isa(#[from] IsaError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
