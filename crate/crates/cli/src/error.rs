use memweave_core::error::ConfigError;
use memweave_core::eval::EvalError;
use memweave_core::store::StoreError;
use memweave_core::EngineError;
use thiserror::Error;

/// Failure of one command, classified by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Backend(String),
    #[error("{0}")]
    Capacity(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Input(_) => 3,
            CliError::Backend(_) => 4,
            CliError::Capacity(_) => 5,
            CliError::Internal(_) => 1,
        }
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        let msg = e.to_string();
        match e {
            EngineError::Turn(_) | EngineError::Config(_) => CliError::Input(msg),
            EngineError::Backend(_) | EngineError::Parse(_) => CliError::Backend(msg),
            EngineError::CapacityOverflow { .. } => CliError::Capacity(msg),
            EngineError::Invariant(_) | EngineError::UnknownMemory(_) => CliError::Internal(msg),
        }
    }
}

impl From<StoreError> for CliError {
    fn from(e: StoreError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Engine(e) => e.into(),
            EvalError::Backend(e) => CliError::Backend(e.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}
