//! Versioned state files and append-only JSONL logs.
//!
//! A state file is canonical JSON:
//!
//! ```text
//! {"checksum":"<sha256 of the canonical document>","document":{...},"format_version":1}
//! ```
//!
//! Cached scores are not stored; they are recomputed when a document is
//! attached to an engine.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::canonical;
use crate::engine::{Engine, EngineState};
use crate::forgetting::EvictionRecord;
use crate::types::DialogueTurn;

pub const FORMAT_VERSION: u64 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("unsupported state format version {found} (this build reads up to {supported})")]
    VersionMismatch { found: u64, supported: u64 },
    #[error("corrupt state: {0}")]
    Corruption(String),
    #[error("state was written with config {found}, engine uses {expected}")]
    ConfigMismatch { expected: String, found: String },
    #[error("{path}:{line}: {reason}")]
    Log {
        path: PathBuf,
        line: usize,
        reason: String,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateDocument {
    pub config_hash: String,
    pub backend_identities: BTreeMap<String, String>,
    /// Completed rounds, duplicated from the pool for readers of the file.
    pub round_counter: u64,
    pub state: EngineState,
}

impl StateDocument {
    pub fn capture(engine: &Engine) -> Self {
        Self {
            config_hash: engine.config_hash(),
            backend_identities: engine.backends().identities(),
            round_counter: engine.state().completed_rounds(),
            state: engine.state().clone(),
        }
    }

    /// Installs this document into `engine` after checking the config hash.
    pub fn restore_into(self, engine: &mut Engine) -> Result<(), StoreError> {
        let expected = engine.config_hash();
        if self.config_hash != expected {
            return Err(StoreError::ConfigMismatch {
                expected,
                found: self.config_hash,
            });
        }
        engine.replace_state(self.state);
        Ok(())
    }

    fn check(&self) -> Result<(), StoreError> {
        let pool = &self.state.pool;
        if self.round_counter != pool.current_round() {
            return Err(StoreError::Corruption(format!(
                "round counter {} disagrees with pool round {}",
                self.round_counter,
                pool.current_round()
            )));
        }
        for item in pool.iter() {
            if item.text.is_empty() {
                return Err(StoreError::Corruption(format!("{} has empty text", item.id)));
            }
            if item.creation_round > pool.current_round()
                || item.retrieval_rounds.iter().any(|&r| r < item.creation_round || r > pool.current_round())
            {
                return Err(StoreError::Corruption(format!("{} has rounds outside its lifetime", item.id)));
            }
        }
        Ok(())
    }
}

fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Canonical bytes of `doc` wrapped in the versioned envelope.
pub fn save(doc: &StateDocument) -> Vec<u8> {
    let document = serde_json::to_value(doc).expect("state serializes to JSON");
    let checksum = digest(&canonical::to_vec(&document));
    let envelope = json!({
        "checksum": checksum,
        "document": document,
        "format_version": FORMAT_VERSION,
    });
    let mut bytes = canonical::to_vec(&envelope);
    bytes.push(b'\n');
    bytes
}

pub fn load(bytes: &[u8]) -> Result<StateDocument, StoreError> {
    let envelope: Value =
        serde_json::from_slice(bytes).map_err(|e| StoreError::Corruption(format!("not a state document: {e}")))?;
    let version = envelope
        .get("format_version")
        .and_then(Value::as_u64)
        .ok_or_else(|| StoreError::Corruption("missing format_version".into()))?;
    if version != FORMAT_VERSION {
        return Err(StoreError::VersionMismatch {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    let document = envelope
        .get("document")
        .ok_or_else(|| StoreError::Corruption("missing document".into()))?;
    let checksum = envelope
        .get("checksum")
        .and_then(Value::as_str)
        .ok_or_else(|| StoreError::Corruption("missing checksum".into()))?;
    if digest(&canonical::to_vec(document)) != checksum {
        return Err(StoreError::Corruption("checksum mismatch".into()));
    }
    let doc: StateDocument =
        serde_json::from_value(document.clone()).map_err(|e| StoreError::Corruption(e.to_string()))?;
    doc.check()?;
    Ok(doc)
}

/// Writes the engine's state to `path` through a temporary file and rename.
pub fn save_engine(engine: &Engine, path: &Path) -> Result<(), StoreError> {
    let bytes = save(&StateDocument::capture(engine));
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(&bytes).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
    }
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn load_into(engine: &mut Engine, path: &Path) -> Result<(), StoreError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    load(&bytes)?.restore_into(engine)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnEvent {
    pub seq: u64,
    pub turn: DialogueTurn,
}

/// Append-only log of accepted turns, one JSON record per line.
#[derive(Debug)]
pub struct EventLog {
    path: PathBuf,
    file: File,
    next_seq: u64,
}

impl EventLog {
    /// Opens or creates the log, continuing after its last complete record.
    /// A torn final line is cut off.
    pub fn open(path: &Path) -> Result<Self, StoreError> {
        let next_seq = if path.exists() {
            replay(path)?.last().map_or(0, |e| e.seq + 1)
        } else {
            0
        };
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io_err(path))?;
        let bytes = std::fs::read(path).map_err(io_err(path))?;
        if !bytes.is_empty() && !bytes.ends_with(b"\n") {
            let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |p| p + 1);
            file.set_len(keep as u64).map_err(io_err(path))?;
        }
        Ok(Self {
            path: path.to_path_buf(),
            file,
            next_seq,
        })
    }

    pub fn append(&mut self, turn: &DialogueTurn) -> Result<u64, StoreError> {
        let seq = self.next_seq;
        let record = serde_json::to_value(TurnEvent { seq, turn: turn.clone() }).expect("turn serializes");
        let mut line = canonical::to_vec(&record);
        line.push(b'\n');
        self.file.write_all(&line).map_err(io_err(&self.path))?;
        self.file.sync_data().map_err(io_err(&self.path))?;
        self.next_seq += 1;
        Ok(seq)
    }
}

/// Reads all complete records. A final line without a newline is a torn
/// write and is skipped; any other malformed line is an error.
pub fn replay(path: &Path) -> Result<Vec<TurnEvent>, StoreError> {
    read_jsonl(path, |_, event: &TurnEvent, events: &[TurnEvent]| {
        let expected = events.last().map_or(0, |e| e.seq + 1);
        if event.seq != expected {
            return Err(format!("expected sequence {expected}, found {}", event.seq));
        }
        Ok(())
    })
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(
    path: &Path,
    check: impl Fn(usize, &T, &[T]) -> Result<(), String>,
) -> Result<Vec<T>, StoreError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = BufReader::new(file);
    let mut out = Vec::new();
    let mut buf = String::new();
    let mut line_no = 0;
    loop {
        buf.clear();
        let n = reader.read_line(&mut buf).map_err(io_err(path))?;
        if n == 0 {
            break;
        }
        line_no += 1;
        let complete = buf.ends_with('\n');
        let text = buf.trim_end();
        if text.is_empty() {
            continue;
        }
        match serde_json::from_str::<T>(text) {
            Ok(record) => {
                check(line_no, &record, &out).map_err(|reason| StoreError::Log {
                    path: path.to_path_buf(),
                    line: line_no,
                    reason,
                })?;
                out.push(record);
            }
            Err(_) if !complete => break,
            Err(e) => {
                return Err(StoreError::Log {
                    path: path.to_path_buf(),
                    line: line_no,
                    reason: e.to_string(),
                })
            }
        }
    }
    Ok(out)
}

/// Append-only eviction audit trail.
#[derive(Debug)]
pub struct AuditLog {
    path: PathBuf,
    file: File,
}

impl AuditLog {
    pub fn open(path: &Path) -> Result<Self, StoreError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io_err(path))?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
        })
    }

    pub fn append(&mut self, records: &[EvictionRecord]) -> Result<(), StoreError> {
        if records.is_empty() {
            return Ok(());
        }
        let mut bytes = Vec::new();
        for r in records {
            bytes.extend(canonical::to_vec(&serde_json::to_value(r).expect("record serializes")));
            bytes.push(b'\n');
        }
        self.file.write_all(&bytes).map_err(io_err(&self.path))?;
        self.file.sync_data().map_err(io_err(&self.path))
    }

    pub fn read(path: &Path) -> Result<Vec<EvictionRecord>, StoreError> {
        read_jsonl(path, |_, _: &EvictionRecord, _| Ok(()))
    }
}
