//! Command line and local HTTP service for the memweave engine.

pub mod error;
pub mod ops;
pub mod serve;
pub mod settings;

pub use error::CliError;
pub use ops::Session;
pub use settings::{BackendKind, Settings};
