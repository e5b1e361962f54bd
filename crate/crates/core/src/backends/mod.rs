//! Model backends: text generation, pairwise similarity and reranking.
//!
//! The engine only talks to these traits. Deterministic mocks and an
//! offline lexical scorer ship with the crate; [`RemoteGenerator`] talks to
//! a chat-completion HTTP endpoint.

mod budget;
mod lexical;
mod mock;
mod remote;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use thiserror::Error;

use crate::types::MemoryId;

pub use budget::{CallBudget, CallCounts, CallKind};
pub use lexical::{dice, LexicalScorer};
pub use mock::{MockBehavior, MockGenerator};
pub use remote::{EndpointConfig, RemoteGenerator};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("request timed out: {0}")]
    Timeout(String),
    #[error("authentication rejected (HTTP {status})")]
    Auth { status: u16 },
    #[error("malformed response: {0}")]
    Protocol(String),
    #[error("backend call budget of {limit} per round exhausted")]
    BudgetExceeded { limit: u32 },
    #[error("backend unavailable: {0}")]
    Unavailable(String),
}

impl BackendError {
    pub fn is_retriable(&self) -> bool {
        matches!(
            self,
            BackendError::Transport(_) | BackendError::Timeout(_) | BackendError::Unavailable(_)
        )
    }
}

pub trait TextGenerator: Send + Sync {
    /// Generates at most `max_length` characters for `prompt`.
    fn generate(&self, prompt: &str, max_length: usize) -> Result<String, BackendError>;

    /// Stable descriptor recorded in saved state.
    fn identity(&self) -> String;
}

pub trait SimilarityScorer: Send + Sync {
    /// Similarity in `[0, 1]`.
    fn score(&self, a: &str, b: &str) -> Result<f64, BackendError>;

    fn identity(&self) -> String;
}

#[derive(Debug, Clone, Copy)]
pub struct Candidate<'a> {
    pub id: MemoryId,
    pub text: &'a str,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ranked {
    pub id: MemoryId,
    pub score: f64,
}

pub trait Reranker: Send + Sync {
    /// Orders candidates by relevance to `query`, most relevant first.
    /// Returns a permutation of the input ids with scores in `[0, 1]`.
    fn rerank(&self, query: &str, candidates: &[Candidate<'_>]) -> Result<Vec<Ranked>, BackendError>;

    fn identity(&self) -> String;
}

/// Wraps a generator and counts calls. Optionally keeps the prompts.
pub struct CountingGenerator {
    inner: Arc<dyn TextGenerator>,
    calls: AtomicUsize,
    prompts: Option<Mutex<Vec<String>>>,
}

impl CountingGenerator {
    pub fn new(inner: Arc<dyn TextGenerator>) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
            prompts: None,
        }
    }

    pub fn recording(inner: Arc<dyn TextGenerator>) -> Self {
        Self {
            prompts: Some(Mutex::new(Vec::new())),
            ..Self::new(inner)
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn prompts(&self) -> Vec<String> {
        self.prompts
            .as_ref()
            .map(|p| p.lock().expect("prompt log poisoned").clone())
            .unwrap_or_default()
    }
}

impl TextGenerator for CountingGenerator {
    fn generate(&self, prompt: &str, max_length: usize) -> Result<String, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if let Some(log) = &self.prompts {
            log.lock().expect("prompt log poisoned").push(prompt.to_string());
        }
        self.inner.generate(prompt, max_length)
    }

    fn identity(&self) -> String {
        self.inner.identity()
    }
}

/// Backends wired into an engine.
#[derive(Clone)]
pub struct Backends {
    /// Narrative summarization.
    pub summarizer: Arc<dyn TextGenerator>,
    /// Persona snapshot extraction.
    pub extractor: Arc<dyn TextGenerator>,
    /// Merging of complex persona keys.
    pub merger: Arc<dyn TextGenerator>,
    pub scorer: Arc<dyn SimilarityScorer>,
    pub reranker: Arc<dyn Reranker>,
}

impl Backends {
    /// Fully offline, deterministic backends.
    pub fn mock(summarizer: MockBehavior) -> Self {
        let lexical = Arc::new(LexicalScorer);
        Self {
            summarizer: Arc::new(MockGenerator::new(summarizer)),
            extractor: Arc::new(MockGenerator::new(MockBehavior::PatternPersona)),
            merger: Arc::new(MockGenerator::new(MockBehavior::UnionMerge)),
            scorer: lexical.clone(),
            reranker: lexical,
        }
    }

    pub fn identities(&self) -> std::collections::BTreeMap<String, String> {
        [
            ("summarizer", self.summarizer.identity()),
            ("extractor", self.extractor.identity()),
            ("merger", self.merger.identity()),
            ("scorer", self.scorer.identity()),
            ("reranker", self.reranker.identity()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

impl std::fmt::Debug for Backends {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_map().entries(self.identities()).finish()
    }
}

/// Truncates to at most `max` characters.
pub(crate) fn truncate_chars(s: &str, max: usize) -> String {
    s.chars().take(max).collect()
}
