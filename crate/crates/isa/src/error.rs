use thiserror::Error;

pub type Result<T> = std::result::Result<T, IsaError>;

#[derive(Error, Debug)]
pub enum IsaError {
    #[error("illegal opcode ordinal {0:#04x}")]
    IllegalOpcode(u8),

    #[error("invalid program: {0}")]
    InvalidProgram(String),

    #[error("malformed program container: {0}")]
    Container(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
