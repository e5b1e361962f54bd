//! Evaluation harness: best-match label scoring, ROUGE precision, judged
//! memory fidelity, multiple-choice probes and insertion-recall triplets.

mod rouge;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::backends::{BackendError, SimilarityScorer, TextGenerator};
use crate::engine::Engine;
use crate::error::EngineError;
use crate::prompts::{render, EvalPrompts};
use crate::types::{DialogueTurn, Speaker};

pub use rouge::{lcs_len, rouge2_tokens, rouge_precision, rougel_tokens, RougeScorer, RougeVariant};

const ANSWER_MAX_LENGTH: usize = 512;
const JUDGE_MAX_LENGTH: usize = 32;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{0} must not be empty")]
    Empty(&'static str),
    #[error("{path}:{line}: {reason}")]
    Format { path: String, line: usize, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemoryLabel {
    pub text: String,
    pub turn: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeQuestion {
    pub question: String,
    pub options: Vec<String>,
    pub answer_index: usize,
    pub turn: u64,
}

impl ProbeQuestion {
    pub fn validate(&self) -> Result<(), String> {
        if self.options.len() != 4 {
            return Err(format!("expected 4 options, found {}", self.options.len()));
        }
        for (i, a) in self.options.iter().enumerate() {
            if self.options[..i].contains(a) {
                return Err(format!("duplicate option {a:?}"));
            }
        }
        if self.answer_index > 3 {
            return Err(format!("answer_index {} is not in 0..=3", self.answer_index));
        }
        Ok(())
    }

    /// `A. …` lines for the prompt.
    pub fn options_block(&self) -> String {
        self.options
            .iter()
            .zip(LETTERS)
            .map(|(o, l)| format!("{l}. {o}"))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

const LETTERS: [char; 4] = ['A', 'B', 'C', 'D'];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeTriplet {
    /// Dialogue carrying the information.
    #[serde(rename = "P")]
    pub info_dialogue: String,
    /// Later message that needs the information.
    #[serde(rename = "Q")]
    pub retrieval_dialogue: String,
    /// Reference answer.
    #[serde(rename = "A")]
    pub reference_answer: String,
}

fn read_records<T: DeserializeOwned>(
    path: &Path,
    validate: impl Fn(&T) -> Result<(), String>,
) -> Result<Vec<T>, EvalError> {
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: display.clone(),
        source,
    })?;
    parse_records(&text, &display, validate)
}

/// Parses JSONL records, skipping blank lines.
pub fn parse_records<T: DeserializeOwned>(
    text: &str,
    origin: &str,
    validate: impl Fn(&T) -> Result<(), String>,
) -> Result<Vec<T>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let format_err = |reason: String| EvalError::Format {
            path: origin.to_string(),
            line: i + 1,
            reason,
        };
        let record: T = serde_json::from_str(line).map_err(|e| format_err(e.to_string()))?;
        validate(&record).map_err(format_err)?;
        out.push(record);
    }
    Ok(out)
}

pub fn load_labels(path: &Path) -> Result<Vec<MemoryLabel>, EvalError> {
    read_records(path, |l: &MemoryLabel| {
        if l.text.trim().is_empty() {
            Err("label text is empty".into())
        } else {
            Ok(())
        }
    })
}

pub fn load_probes(path: &Path) -> Result<Vec<ProbeQuestion>, EvalError> {
    read_records(path, ProbeQuestion::validate)
}

pub fn load_triplets(path: &Path) -> Result<Vec<ProbeTriplet>, EvalError> {
    read_records(path, |t: &ProbeTriplet| {
        if [&t.info_dialogue, &t.retrieval_dialogue, &t.reference_answer]
            .iter()
            .any(|s| s.trim().is_empty())
        {
            Err("P, Q and A must be non-empty".into())
        } else {
            Ok(())
        }
    })
}

/// Metric values plus one detail row per evaluated item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report<R> {
    pub metrics: BTreeMap<String, f64>,
    pub rows: Vec<R>,
}

impl<R> Report<R> {
    pub fn metric(&self, name: &str) -> f64 {
        self.metrics[name]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRow {
    pub label: String,
    /// Index of the best-matching memory, if any memory exists.
    pub best_memory: Option<usize>,
    pub score: f64,
}

/// Mean over labels of the best similarity any memory achieves.
pub fn best_match_score(
    labels: &[MemoryLabel],
    memories: &[String],
    scorer: &dyn SimilarityScorer,
) -> Result<Report<LabelRow>, EvalError> {
    if labels.is_empty() {
        return Err(EvalError::Empty("labels"));
    }
    let mut rows = Vec::with_capacity(labels.len());
    for label in labels {
        let mut best: Option<(usize, f64)> = None;
        for (i, m) in memories.iter().enumerate() {
            let s = scorer.score(&label.text, m)?;
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
        rows.push(LabelRow {
            label: label.text.clone(),
            best_memory: best.map(|b| b.0),
            score: best.map_or(0.0, |b| b.1),
        });
    }
    let mean = rows.iter().map(|r| r.score).sum::<f64>() / rows.len() as f64;
    Ok(Report {
        metrics: BTreeMap::from([(format!("best_match:{}", scorer.identity()), mean)]),
        rows,
    })
}

static SCORE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\d+").expect("score regex"));
static LETTER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b([A-D])\b").expect("letter regex"));

/// First integer in the judge's reply, if it lies in `0..=5`.
pub fn parse_judge_score(raw: &str) -> Option<u8> {
    let n: u32 = SCORE.find(raw)?.as_str().parse().ok()?;
    (n <= 5).then_some(n as u8)
}

/// First standalone option letter in the answer, as an index.
pub fn parse_choice(raw: &str) -> Option<usize> {
    let letter = LETTER.captures(raw.trim())?[1].chars().next()?;
    LETTERS.iter().position(|&l| l == letter)
}

fn memories_block(memories: &[String]) -> String {
    memories
        .iter()
        .map(|m| format!("- {}", m.replace('\n', " ")))
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemScoreRow {
    pub label: String,
    /// Memories whose best label is this one.
    pub matched_memories: Vec<usize>,
    pub score: u8,
    /// Judge replies that could not be parsed.
    pub unparsed: Vec<String>,
}

/// Judged fidelity: each memory goes to its most similar label, the judge
/// scores the pair 0 to 5, each label keeps its best score, unmatched labels
/// score 0.
pub fn mem_score(
    memories: &[String],
    labels: &[MemoryLabel],
    scorer: &dyn SimilarityScorer,
    judge: &dyn TextGenerator,
    prompts: &EvalPrompts,
) -> Result<Report<MemScoreRow>, EvalError> {
    if labels.is_empty() {
        return Err(EvalError::Empty("labels"));
    }
    let mut rows: Vec<MemScoreRow> = labels
        .iter()
        .map(|l| MemScoreRow {
            label: l.text.clone(),
            matched_memories: Vec::new(),
            score: 0,
            unparsed: Vec::new(),
        })
        .collect();
    for (mi, memory) in memories.iter().enumerate() {
        let mut best = (0usize, f64::NEG_INFINITY);
        for (li, label) in labels.iter().enumerate() {
            let s = scorer.score(&label.text, memory)?;
            if s > best.1 {
                best = (li, s);
            }
        }
        let row = &mut rows[best.0];
        let prompt = render(
            &prompts.judge_memory,
            &[("reference", row.label.as_str()), ("candidate", memory.as_str())],
        );
        let raw = judge.generate(&prompt, JUDGE_MAX_LENGTH)?;
        row.matched_memories.push(mi);
        match parse_judge_score(&raw) {
            Some(s) => row.score = row.score.max(s),
            None => {
                warn!(label = %row.label, raw = %raw, "unparseable judge output");
                row.unparsed.push(raw);
            }
        }
    }
    let mean = rows.iter().map(|r| r.score as f64).sum::<f64>() / rows.len() as f64;
    Ok(Report {
        metrics: BTreeMap::from([("mem_score".to_string(), mean)]),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub question: String,
    pub expected: usize,
    pub answered: Option<usize>,
    pub correct: bool,
    pub raw: String,
    pub memories: usize,
}

/// Fraction of probes answered correctly. `memories_for` supplies the
/// memory texts available at each probe's turn.
pub fn probe_qa_precision(
    probes: &[ProbeQuestion],
    mut memories_for: impl FnMut(&ProbeQuestion) -> Result<Vec<String>, EvalError>,
    answerer: &dyn TextGenerator,
    prompts: &EvalPrompts,
) -> Result<Report<ProbeRow>, EvalError> {
    if probes.is_empty() {
        return Err(EvalError::Empty("probe list"));
    }
    let mut rows = Vec::with_capacity(probes.len());
    for probe in probes {
        let memories = memories_for(probe)?;
        let prompt = render(
            &prompts.probe_answer,
            &[
                ("memories", memories_block(&memories).as_str()),
                ("question", probe.question.as_str()),
                ("options", probe.options_block().as_str()),
            ],
        );
        let raw = answerer.generate(&prompt, ANSWER_MAX_LENGTH)?;
        let answered = parse_choice(&raw);
        if answered.is_none() {
            warn!(question = %probe.question, raw = %raw, "unparseable probe answer");
        }
        rows.push(ProbeRow {
            question: probe.question.clone(),
            expected: probe.answer_index,
            answered,
            correct: answered == Some(probe.answer_index),
            raw,
            memories: memories.len(),
        });
    }
    let correct = rows.iter().filter(|r| r.correct).count();
    Ok(Report {
        metrics: BTreeMap::from([("probe_qa_precision".to_string(), correct as f64 / rows.len() as f64)]),
        rows,
    })
}

/// A memory system under an insertion-recall test.
pub trait ProbeHost {
    /// Feeds the information-carrying dialogue and advances the conversation.
    fn inject(&mut self, info: &str) -> Result<(), EvalError>;
    /// Memories retrieved for `query`.
    fn recall(&mut self, query: &str) -> Result<Vec<String>, EvalError>;
}

/// Host with no memory at all.
#[derive(Debug, Default)]
pub struct NullHost;

impl ProbeHost for NullHost {
    fn inject(&mut self, _info: &str) -> Result<(), EvalError> {
        Ok(())
    }

    fn recall(&mut self, _query: &str) -> Result<Vec<String>, EvalError> {
        Ok(Vec::new())
    }
}

/// Drives an [`Engine`]: the information becomes a user turn, followed by
/// `filler_rounds` neutral rounds so it can be packaged.
pub struct EngineHost<'a> {
    pub engine: &'a mut Engine,
    pub filler_rounds: usize,
    pub k: usize,
    session: String,
    filler_counter: u64,
}

impl<'a> EngineHost<'a> {
    pub fn new(engine: &'a mut Engine, session: &str) -> Self {
        let filler_rounds = engine.config().nsb.theta1;
        let k = engine.config().retrieval_k;
        Self {
            engine,
            filler_rounds,
            k,
            session: session.to_string(),
            filler_counter: 0,
        }
    }

    fn say(&mut self, speaker: Speaker, text: String) -> Result<(), EvalError> {
        let state = self.engine.state();
        let session = state.session_id.clone().unwrap_or_else(|| self.session.clone());
        let index = state.next_turn_index;
        self.engine.ingest_turn(DialogueTurn::new(session, index, speaker, text))?;
        Ok(())
    }

    fn next_speaker(&self) -> Speaker {
        self.engine
            .state()
            .last_speaker
            .map_or(Speaker::User, Speaker::other)
    }

    fn filler(&mut self) -> String {
        self.filler_counter += 1;
        format!("(small talk {})", self.filler_counter)
    }
}

impl ProbeHost for EngineHost<'_> {
    fn inject(&mut self, info: &str) -> Result<(), EvalError> {
        if self.next_speaker() != Speaker::User {
            let f = self.filler();
            self.say(Speaker::Chatbot, f)?;
        }
        self.say(Speaker::User, info.to_string())?;
        self.say(Speaker::Chatbot, "I see.".to_string())?;
        for _ in 0..self.filler_rounds {
            let (u, b) = (self.filler(), self.filler());
            self.say(Speaker::User, u)?;
            self.say(Speaker::Chatbot, b)?;
        }
        Ok(())
    }

    fn recall(&mut self, query: &str) -> Result<Vec<String>, EvalError> {
        Ok(self
            .engine
            .retrieve(query, self.k)?
            .into_iter()
            .map(|r| r.text)
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletRow {
    pub query: String,
    pub response: String,
    pub score: u8,
    pub judge_raw: String,
}

/// Mean judged 0 to 5 agreement between the answerer's reply to Q and the
/// reference answer, after P was given to `host`.
pub fn probe_table_eval(
    triplets: &[ProbeTriplet],
    host: &mut dyn ProbeHost,
    answerer: &dyn TextGenerator,
    judge: &dyn TextGenerator,
    prompts: &EvalPrompts,
) -> Result<Report<TripletRow>, EvalError> {
    if triplets.is_empty() {
        return Err(EvalError::Empty("triplet list"));
    }
    let mut rows = Vec::with_capacity(triplets.len());
    for t in triplets {
        host.inject(&t.info_dialogue)?;
        let memories = host.recall(&t.retrieval_dialogue)?;
        let prompt = render(
            &prompts.table_answer,
            &[
                ("memories", memories_block(&memories).as_str()),
                ("query", t.retrieval_dialogue.as_str()),
            ],
        );
        let response = answerer.generate(&prompt, ANSWER_MAX_LENGTH)?;
        let judge_prompt = render(
            &prompts.judge_response,
            &[
                ("reference", t.reference_answer.as_str()),
                ("candidate", response.as_str()),
            ],
        );
        let judge_raw = judge.generate(&judge_prompt, JUDGE_MAX_LENGTH)?;
        let score = parse_judge_score(&judge_raw).unwrap_or_else(|| {
            warn!(raw = %judge_raw, "unparseable judge output");
            0
        });
        rows.push(TripletRow {
            query: t.retrieval_dialogue.clone(),
            response,
            score,
            judge_raw,
        });
    }
    let mean = rows.iter().map(|r| r.score as f64).sum::<f64>() / rows.len() as f64;
    Ok(Report {
        metrics: BTreeMap::from([("probe_table_score".to_string(), mean)]),
        rows,
    })
}
