//! Operations shared by the command line and the HTTP service.

use std::path::{Path, PathBuf};

use memweave_core::engine::{EngineStats, Retrieved, RoundReport};
use memweave_core::eval::{
    self, EngineHost, LabelRow, MemScoreRow, MemoryLabel, ProbeQuestion, ProbeRow, ProbeTriplet, Report,
    RougeScorer, RougeVariant, TripletRow,
};
use memweave_core::forgetting::EvictionRecord;
use memweave_core::pcb::PersonaSketch;
use memweave_core::prompts::EvalPrompts;
use memweave_core::store::{self, AuditLog, EventLog};
use memweave_core::types::{DialogueTurn, MemoryItem, Speaker};
use memweave_core::Engine;
use serde::{Deserialize, Serialize};
use tracing::info;

use crate::error::CliError;
use crate::settings::{BackendKind, EvalModels, Settings};

const DEFAULT_SESSION: &str = "default";

/// `state.json` -> `state.events.jsonl`.
pub fn sibling(state: &Path, suffix: &str) -> PathBuf {
    let stem = state.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    state.with_file_name(format!("{stem}.{suffix}"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub accepted: usize,
    /// Turns already present in the state.
    pub skipped: usize,
    pub rounds: Vec<RoundSummary>,
    pub stats: EngineStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: u64,
    pub created: usize,
    pub persona_updated: usize,
    pub evicted: usize,
}

impl From<&RoundReport> for RoundSummary {
    fn from(r: &RoundReport) -> Self {
        Self {
            round: r.round,
            created: r.created.len(),
            persona_updated: r.persona.updated.len(),
            evicted: r.evicted.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRequest {
    /// Defaults to the speaker who did not talk last.
    #[serde(default)]
    pub speaker: Option<Speaker>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrieveRequest {
    pub query: String,
    #[serde(default)]
    pub k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Dump {
    pub stats: EngineStats,
    pub persona: PersonaSketch,
    pub memories: Vec<MemoryItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelEval {
    pub best_match: Report<LabelRow>,
    pub mem_score: Report<MemScoreRow>,
}

/// An engine bound to an optional state file and its logs.
///
/// With a state path, accepted turns go to `<stem>.events.jsonl` and
/// evictions to `<stem>.evictions.jsonl`. Turns logged after the last save
/// are replayed on open.
pub struct Session {
    engine: Engine,
    state_path: Option<PathBuf>,
    events: Option<EventLog>,
    audit: Option<AuditLog>,
    eval_prompts: EvalPrompts,
}

impl Session {
    pub fn open(settings: &Settings, backend: BackendKind, state_path: Option<&Path>) -> Result<Self, CliError> {
        let mut engine = Engine::new(settings.engine.clone(), settings.engine_backends(backend))?;
        let Some(path) = state_path else {
            return Ok(Self {
                engine,
                state_path: None,
                events: None,
                audit: None,
                eval_prompts: EvalPrompts::default(),
            });
        };
        if path.exists() {
            store::load_into(&mut engine, path)?;
        }
        let events_path = sibling(path, "events.jsonl");
        let mut audit = AuditLog::open(&sibling(path, "evictions.jsonl"))?;
        let mut replayed = 0;
        if events_path.exists() {
            let next = engine.state().next_turn_index;
            for event in store::replay(&events_path)? {
                if event.turn.turn_index >= next {
                    if let Some(report) = engine.ingest_turn(event.turn)? {
                        audit.append(&report.evicted)?;
                    }
                    replayed += 1;
                }
            }
        }
        let session = Self {
            engine,
            state_path: Some(path.to_path_buf()),
            events: Some(EventLog::open(&events_path)?),
            audit: Some(audit),
            eval_prompts: EvalPrompts::default(),
        };
        if replayed > 0 {
            info!(replayed, "recovered turns from the event log");
            session.persist()?;
        }
        Ok(session)
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    fn persist(&self) -> Result<(), CliError> {
        if let Some(path) = &self.state_path {
            store::save_engine(&self.engine, path)?;
        }
        Ok(())
    }

    fn accept(&mut self, turn: DialogueTurn) -> Result<Option<RoundReport>, CliError> {
        let report = self.engine.ingest_turn(turn.clone())?;
        if let Some(log) = &mut self.events {
            log.append(&turn)?;
        }
        if let (Some(audit), Some(r)) = (&mut self.audit, &report) {
            audit.append(&r.evicted)?;
        }
        Ok(report)
    }

    /// Ingests `turns`, skipping those the state already holds, and saves.
    /// On failure the turns accepted so far are kept and saved.
    pub fn ingest(&mut self, turns: Vec<DialogueTurn>) -> Result<IngestSummary, CliError> {
        let next = self.engine.state().next_turn_index;
        let mut rounds = Vec::new();
        let mut accepted = 0;
        let mut skipped = 0;
        let mut failure = None;
        for turn in turns {
            if turn.turn_index < next {
                skipped += 1;
                continue;
            }
            match self.accept(turn) {
                Ok(report) => {
                    accepted += 1;
                    rounds.extend(report.as_ref().map(RoundSummary::from));
                }
                Err(e) => {
                    failure = Some(e);
                    break;
                }
            }
        }
        self.persist()?;
        if let Some(e) = failure {
            return Err(e);
        }
        Ok(IngestSummary {
            accepted,
            skipped,
            rounds,
            stats: self.engine.stats(),
        })
    }

    /// Ingests one utterance at the next turn index.
    pub fn step(&mut self, req: StepRequest) -> Result<IngestSummary, CliError> {
        let state = self.engine.state();
        let speaker = req.speaker.unwrap_or_else(|| match state.last_speaker {
            Some(s) => s.other(),
            None => self.engine.config().first_speaker.unwrap_or(Speaker::User),
        });
        let session = state.session_id.as_deref().unwrap_or(DEFAULT_SESSION);
        let turn = DialogueTurn::new(session, state.next_turn_index, speaker, req.text);
        self.ingest(vec![turn])
    }

    /// Pool contents in id order.
    pub fn memories(&self) -> Vec<MemoryItem> {
        self.engine.pool().iter().cloned().collect()
    }

    pub fn retrieve(&self, req: &RetrieveRequest) -> Result<Vec<Retrieved>, CliError> {
        if req.query.trim().is_empty() {
            return Err(CliError::Usage("query must not be empty".into()));
        }
        let k = req.k.unwrap_or(self.engine.config().retrieval_k);
        Ok(self.engine.retrieve(&req.query, k)?)
    }

    pub fn persona(&self) -> PersonaSketch {
        self.engine.persona().clone()
    }

    pub fn stats(&self) -> EngineStats {
        self.engine.stats()
    }

    pub fn dump(&self) -> Dump {
        Dump {
            stats: self.stats(),
            persona: self.persona(),
            memories: self.memories(),
        }
    }

    /// Eviction records, optionally for one round only.
    pub fn evict_log(&self, round: Option<u64>) -> Result<Vec<EvictionRecord>, CliError> {
        let Some(path) = &self.state_path else {
            return Err(CliError::Usage("evict-log needs --state".into()));
        };
        let mut records = AuditLog::read(&sibling(path, "evictions.jsonl"))?;
        records.retain(|r| round.is_none_or(|n| r.round == n));
        Ok(records)
    }

    fn memory_texts(&self) -> Vec<String> {
        self.engine.pool().iter().map(|m| m.text.clone()).collect()
    }

    pub fn eval_labels(&self, labels: &[MemoryLabel], models: &EvalModels) -> Result<LabelEval, CliError> {
        let memories = self.memory_texts();
        let scorer = RougeScorer(RougeVariant::RougeL);
        Ok(LabelEval {
            best_match: eval::best_match_score(labels, &memories, &scorer)?,
            mem_score: eval::mem_score(
                &memories,
                labels,
                self.engine.backends().scorer.as_ref(),
                models.judge.as_ref(),
                &self.eval_prompts,
            )?,
        })
    }

    pub fn eval_probes(&self, probes: &[ProbeQuestion], models: &EvalModels) -> Result<Report<ProbeRow>, CliError> {
        let k = self.engine.config().retrieval_k;
        let engine = &self.engine;
        let memories_for = |p: &ProbeQuestion| {
            Ok(engine
                .retrieve(&p.question, k)?
                .into_iter()
                .map(|r| r.text)
                .collect())
        };
        Ok(eval::probe_qa_precision(
            probes,
            memories_for,
            models.probe_answerer.as_ref(),
            &self.eval_prompts,
        )?)
    }

    /// Runs the insertion-recall table on a scratch copy of the engine; the
    /// session itself is untouched.
    pub fn eval_table(&self, triplets: &[ProbeTriplet], models: &EvalModels) -> Result<Report<TripletRow>, CliError> {
        let mut scratch = Engine::new(self.engine.config().clone(), self.engine.backends().clone())?
            .with_prompts(self.engine.prompts().clone());
        scratch.replace_state(self.engine.state().clone());
        let session = self.engine.state().session_id.clone().unwrap_or_else(|| DEFAULT_SESSION.into());
        let mut host = EngineHost::new(&mut scratch, &session);
        Ok(eval::probe_table_eval(
            triplets,
            &mut host,
            models.table_answerer.as_ref(),
            models.judge.as_ref(),
            &self.eval_prompts,
        )?)
    }
}

/// Reads a JSONL transcript of turn records.
pub fn load_transcript(path: &Path) -> Result<Vec<DialogueTurn>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    Ok(eval::parse_records(&text, &path.display().to_string(), |t: &DialogueTurn| {
        if t.text.trim().is_empty() {
            Err(format!("turn {} has empty text", t.turn_index))
        } else {
            Ok(())
        }
    })?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sibling_paths() {
        assert_eq!(sibling(Path::new("/a/state.json"), "events.jsonl"), Path::new("/a/state.events.jsonl"));
        assert_eq!(sibling(Path::new("s"), "evictions.jsonl"), Path::new("s.evictions.jsonl"));
    }

    #[test]
    fn step_alternates_speakers() {
        let mut s = Session::open(&Settings::default(), BackendKind::MockSum, None).unwrap();
        for text in ["hi", "hello", "my name is Wei", "nice"] {
            s.step(StepRequest { speaker: None, text: text.into() }).unwrap();
        }
        let st = s.stats();
        assert_eq!((st.turns, st.rounds), (4, 2));
        assert_eq!(s.engine().state().last_speaker, Some(Speaker::Chatbot));
    }

    #[test]
    fn crash_after_logging_recovers_on_open() {
        let dir = tempfile::tempdir().unwrap();
        let state = dir.path().join("s.json");
        let settings = Settings::default();
        let turns = memweave_core::synthetic::fuzzed_transcript("x", 20, 1).turns;
        {
            let mut s = Session::open(&settings, BackendKind::MockSum, Some(&state)).unwrap();
            s.ingest(turns[..10].to_vec()).unwrap();
            // accepted and logged but never saved
            for t in &turns[10..25] {
                s.accept(t.clone()).unwrap();
            }
        }
        let recovered = Session::open(&settings, BackendKind::MockSum, Some(&state)).unwrap();
        assert_eq!(recovered.stats().turns, 25);
        let mut whole = Session::open(&settings, BackendKind::MockSum, None).unwrap();
        whole.ingest(turns[..25].to_vec()).unwrap();
        assert_eq!(
            store::save(&store::StateDocument::capture(recovered.engine())),
            store::save(&store::StateDocument::capture(whole.engine()))
        );
    }
}
