use thiserror::Error;

use crate::backends::BackendError;
use crate::types::MemoryId;

/// Rejections raised while validating an incoming turn.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TurnError {
    #[error("out-of-order turn: expected index {expected}, got {got}")]
    OutOfOrder { expected: u64, got: u64 },
    #[error("turn {turn_index} has empty text")]
    EmptyText { turn_index: u64 },
    #[error("turn belongs to session {got:?}, engine is bound to {expected:?}")]
    SessionMismatch { expected: String, got: String },
    #[error("turn {turn_index}: speaker does not alternate")]
    SpeakerOrder { turn_index: u64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("cannot parse configuration: {0}")]
    Parse(String),
}

/// Backend output that does not satisfy a declared parse contract.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("cannot parse {what} from backend output: {reason}")]
pub struct ParseError {
    pub what: &'static str,
    pub reason: String,
    pub raw: String,
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Turn(#[from] TurnError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("capacity overflow: {used} chars held by eviction-exempt items exceed capacity {capacity}")]
    CapacityOverflow { used: usize, capacity: usize },
    #[error("invariant breach: {0}")]
    Invariant(String),
    #[error("unknown memory {0}")]
    UnknownMemory(MemoryId),
}

impl EngineError {
    /// Whether retrying the same turn may succeed.
    pub fn is_retriable(&self) -> bool {
        match self {
            EngineError::Backend(e) => e.is_retriable(),
            _ => false,
        }
    }
}

pub type Result<T, E = EngineError> = std::result::Result<T, E>;
