//! Turn ingestion and the per-round pipeline.
//!
//! Each completed round runs the narrative branch, then the persona branch,
//! then the forgetting step. A round is applied atomically: if any stage
//! fails the engine state is exactly what it was before the turn that
//! closed the round, so the same turn can be retried.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use tracing::debug;

use crate::backends::{Backends, CallBudget, CallCounts};
use crate::config::EngineConfig;
use crate::error::{EngineError, Result, TurnError};
use crate::forgetting::{forgetting_step, rank_pool, refresh_scores, EvictionRecord, RetrievalPartition};
use crate::nsb::{nsb_step, NsbState};
use crate::pcb::{pcb_step, PcbOutcome, PcbState, PersonaSketch};
use crate::prompts::PromptSet;
use crate::types::{round_of, DialogueTurn, MemoryId, MemoryKind, MemoryPool, Round, Speaker, Transcript};

/// Maps a completed round to the query that triggers retrieval.
pub type QueryHook = Arc<dyn Fn(&Round) -> String + Send + Sync>;

/// Everything that changes as turns arrive.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EngineState {
    /// Bound on the first accepted turn.
    pub session_id: Option<String>,
    pub next_turn_index: u64,
    pub last_speaker: Option<Speaker>,
    /// First half of the round in progress.
    pub pending_turn: Option<DialogueTurn>,
    pub pool: MemoryPool,
    pub nsb: NsbState,
    pub pcb: PcbState,
}

impl EngineState {
    pub fn new(capacity_chars: Option<usize>) -> Self {
        Self {
            pool: MemoryPool::new(capacity_chars),
            ..Self::default()
        }
    }

    pub fn completed_rounds(&self) -> u64 {
        self.pool.current_round()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RoundReport {
    pub round: u64,
    /// Narrative units created this round.
    pub created: Vec<MemoryId>,
    pub persona: PcbOutcome,
    pub partition: Option<RetrievalPartition>,
    pub evicted: Vec<EvictionRecord>,
    pub calls: CallCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Retrieved {
    pub id: MemoryId,
    pub kind: MemoryKind,
    pub text: String,
    pub relevance: f64,
    pub effective_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineStats {
    pub session_id: Option<String>,
    pub turns: u64,
    pub rounds: u64,
    pub pending_turn: bool,
    pub memories: usize,
    pub total_chars: usize,
    pub capacity_chars: Option<usize>,
    pub policy: String,
    pub by_kind: BTreeMap<String, usize>,
    pub narrative_produced: [u64; 3],
    pub persona_keys: usize,
}

pub struct Engine {
    config: EngineConfig,
    backends: Backends,
    prompts: PromptSet,
    query_hook: Option<QueryHook>,
    state: EngineState,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("backends", &self.backends)
            .field("rounds", &self.state.completed_rounds())
            .field("memories", &self.state.pool.len())
            .finish_non_exhaustive()
    }
}

impl Engine {
    pub fn new(config: EngineConfig, backends: Backends) -> Result<Self> {
        config.validate()?;
        let state = EngineState::new(config.capacity_chars);
        Ok(Self {
            config,
            backends,
            prompts: PromptSet::default(),
            query_hook: None,
            state,
        })
    }

    pub fn with_prompts(mut self, prompts: PromptSet) -> Self {
        self.prompts = prompts;
        self
    }

    /// Replaces the default query (the round's two utterances joined).
    pub fn with_query_hook(mut self, hook: QueryHook) -> Self {
        self.query_hook = Some(hook);
        self
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn backends(&self) -> &Backends {
        &self.backends
    }

    pub fn prompts(&self) -> &PromptSet {
        &self.prompts
    }

    pub fn config_hash(&self) -> String {
        self.config.config_hash(&self.prompts)
    }

    pub fn state(&self) -> &EngineState {
        &self.state
    }

    pub fn pool(&self) -> &MemoryPool {
        &self.state.pool
    }

    pub fn persona(&self) -> &PersonaSketch {
        &self.state.pcb.sketch
    }

    /// Installs restored state and recomputes cached scores.
    pub fn replace_state(&mut self, mut state: EngineState) {
        let now = state.pool.current_round();
        refresh_scores(&mut state.pool, now, &self.config.forgetting);
        self.state = state;
    }

    fn validate_turn(&self, turn: &DialogueTurn) -> Result<(), TurnError> {
        if let Some(bound) = &self.state.session_id {
            if *bound != turn.session_id {
                return Err(TurnError::SessionMismatch {
                    expected: bound.clone(),
                    got: turn.session_id.clone(),
                });
            }
        }
        if turn.turn_index != self.state.next_turn_index {
            return Err(TurnError::OutOfOrder {
                expected: self.state.next_turn_index,
                got: turn.turn_index,
            });
        }
        if turn.text.trim().is_empty() {
            return Err(TurnError::EmptyText {
                turn_index: turn.turn_index,
            });
        }
        let expected_speaker = match self.state.last_speaker {
            Some(last) => Some(last.other()),
            None => self.config.first_speaker,
        };
        if expected_speaker.is_some_and(|s| s != turn.speaker) {
            return Err(TurnError::SpeakerOrder {
                turn_index: turn.turn_index,
            });
        }
        Ok(())
    }

    /// Accepts the next turn. Returns a report when the turn completes a
    /// round.
    pub fn ingest_turn(&mut self, mut turn: DialogueTurn) -> Result<Option<RoundReport>> {
        self.validate_turn(&turn)?;
        turn.round_index = round_of(turn.turn_index);
        let Some(first) = self.state.pending_turn.clone() else {
            self.state.session_id.get_or_insert_with(|| turn.session_id.clone());
            self.state.next_turn_index += 1;
            self.state.last_speaker = Some(turn.speaker);
            self.state.pending_turn = Some(turn);
            return Ok(None);
        };

        let before = self.state.clone();
        self.state.pending_turn = None;
        self.state.next_turn_index += 1;
        self.state.last_speaker = Some(turn.speaker);
        let round = Round {
            index: turn.round_index,
            first,
            second: turn,
        };
        match self.run_round(round) {
            Ok(report) => Ok(Some(report)),
            Err(e) => {
                self.state = before;
                Err(e)
            }
        }
    }

    fn run_round(&mut self, round: Round) -> Result<RoundReport> {
        let now = round.index;
        if now != self.state.pool.current_round() + 1 {
            return Err(EngineError::Invariant(format!(
                "round {now} does not follow round {}",
                self.state.pool.current_round()
            )));
        }
        let query = match &self.query_hook {
            Some(hook) => hook(&round),
            None => round.text(),
        };
        let state = &mut self.state;
        state.pool.advance_to(now);
        let mut budget = CallBudget::new(self.config.max_generator_calls_per_round);

        let created = nsb_step(
            &mut state.nsb,
            &mut state.pool,
            round.clone(),
            &self.config.nsb,
            self.backends.summarizer.as_ref(),
            &self.prompts,
            &mut budget,
        )?;
        let persona = pcb_step(
            &mut state.pcb,
            &mut state.pool,
            round,
            &self.config.pcb,
            &self.backends,
            &self.prompts,
            &mut budget,
        )?;
        let forgetting = forgetting_step(
            &mut state.pool,
            &query,
            self.backends.reranker.as_ref(),
            &self.config.forgetting,
            &|m| m.exempt,
        )?;
        debug!(
            round = now,
            created = created.len(),
            evicted = forgetting.evicted.len(),
            memories = state.pool.len(),
            "round complete"
        );
        Ok(RoundReport {
            round: now,
            created,
            persona,
            partition: forgetting.partition,
            evicted: forgetting.evicted,
            calls: budget.counts().clone(),
        })
    }

    /// Ingests every turn of `transcript` in order, stopping at the first error.
    pub fn ingest_transcript(&mut self, transcript: &Transcript) -> Result<Vec<RoundReport>> {
        let mut reports = Vec::new();
        for turn in &transcript.turns {
            reports.extend(self.ingest_turn(turn.clone())?);
        }
        Ok(reports)
    }

    /// Read-only top-`k` retrieval. Neither reinforcement nor suppression is
    /// applied.
    pub fn retrieve(&self, query: &str, k: usize) -> Result<Vec<Retrieved>> {
        if query.trim().is_empty() {
            return Err(EngineError::Invariant("retrieval with an empty query".into()));
        }
        if self.state.pool.is_empty() || k == 0 {
            return Ok(Vec::new());
        }
        let ranked = rank_pool(&self.state.pool, query, self.backends.reranker.as_ref())?;
        Ok(ranked
            .into_iter()
            .take(k)
            .map(|(id, relevance)| {
                let item = self.state.pool.get(id).expect("ranked ids come from the pool");
                Retrieved {
                    id,
                    kind: item.kind,
                    text: item.text.clone(),
                    relevance,
                    effective_score: item.effective_score(),
                }
            })
            .collect())
    }

    pub fn stats(&self) -> EngineStats {
        let pool = &self.state.pool;
        let mut by_kind = BTreeMap::new();
        for item in pool.iter() {
            *by_kind.entry(item.kind.as_str().to_string()).or_insert(0) += 1;
        }
        EngineStats {
            session_id: self.state.session_id.clone(),
            turns: self.state.next_turn_index,
            rounds: pool.current_round(),
            pending_turn: self.state.pending_turn.is_some(),
            memories: pool.len(),
            total_chars: pool.total_chars(),
            capacity_chars: pool.capacity_chars,
            policy: self.config.forgetting.policy.as_str().to_string(),
            by_kind,
            narrative_produced: self.state.nsb.produced,
            persona_keys: self.state.pcb.sketch.entries.values().filter(|v| !v.is_empty()).count(),
        }
    }
}
