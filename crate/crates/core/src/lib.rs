//! Long-term memory for long role-play dialogues.
//!
//! Turns are paired into rounds and fed to two branches: a narrative
//! branch that packages rounds and summarizes them hierarchically, and a
//! persona branch that keeps a key-value profile of the user. A forgetting
//! step bounds the memory pool by reinforcing memories that keep being
//! retrieved and suppressing near misses.

pub mod backends;
pub mod canonical;
pub mod config;
pub mod engine;
pub mod error;
pub mod eval;
pub mod forgetting;
pub mod nsb;
pub mod pcb;
pub mod prompts;
pub mod store;
pub mod synthetic;
pub mod text;
pub mod types;

pub use backends::{Backends, MockBehavior, MockGenerator};
pub use config::{EngineConfig, ForgettingConfig, NsbConfig, PcbConfig, Policy};
pub use engine::{Engine, EngineState, RoundReport};
pub use error::{EngineError, Result};
pub use types::{DialogueTurn, MemoryId, MemoryItem, MemoryKind, MemoryPool, Round, Speaker, Transcript};
