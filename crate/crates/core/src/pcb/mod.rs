//! Persona construction branch.
//!
//! Every `snapshot_interval_rounds` completed rounds the extractor backend
//! reads the window of rounds since the previous snapshot and reports values
//! for the schema keys. Each key is then merged into the cumulative sketch
//! with the strategy of its category, and every key whose values changed is
//! written to the memory pool as a single `persona_fact` item.

mod merge;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use tracing::warn;

pub use merge::{
    merge_append, merge_complex, merge_contradictory, merge_replace, merge_trajectory,
    parse_value_list,
};

use crate::backends::{Backends, CallBudget, CallKind, TextGenerator};
use crate::config::PcbConfig;
use crate::error::{ConfigError, EngineError, ParseError, Result};
use crate::prompts::{render, PromptSet};
use crate::types::{MemoryId, MemoryItem, MemoryKind, MemoryPool, Round};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyCategory {
    /// Static attributes: the newest value replaces the old one.
    Replace,
    /// Expandable attributes: new values are appended.
    Append,
    /// Time-ordered values whose stamps age with every merge.
    Trajectory,
    /// Paired keys whose values contradict each other.
    Contradictory,
    /// Merged by the text backend.
    Complex,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonaKeySchema {
    pub key_name: String,
    pub category: KeyCategory,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conflict_partner: Option<String>,
}

impl PersonaKeySchema {
    pub fn new(key_name: &str, category: KeyCategory) -> Self {
        Self {
            key_name: key_name.to_string(),
            category,
            conflict_partner: None,
        }
    }

    pub fn contradictory(key_name: &str, partner: &str) -> Self {
        Self {
            key_name: key_name.to_string(),
            category: KeyCategory::Contradictory,
            conflict_partner: Some(partner.to_string()),
        }
    }
}

pub fn default_schema() -> Vec<PersonaKeySchema> {
    use KeyCategory::*;
    vec![
        PersonaKeySchema::new("Name", Replace),
        PersonaKeySchema::new("Age", Replace),
        PersonaKeySchema::new("Gender", Replace),
        PersonaKeySchema::new("Profession", Replace),
        PersonaKeySchema::new("Preferences", Append),
        PersonaKeySchema::new("Skills", Append),
        PersonaKeySchema::new("Hobbies", Append),
        PersonaKeySchema::new("Background", Append),
        PersonaKeySchema::new("RecentEvents", Trajectory),
        PersonaKeySchema::new("Plans", Trajectory),
        PersonaKeySchema::contradictory("FavoriteAnimals", "DislikedAnimals"),
        PersonaKeySchema::contradictory("DislikedAnimals", "FavoriteAnimals"),
        PersonaKeySchema::contradictory("FavoriteFoods", "DislikedFoods"),
        PersonaKeySchema::contradictory("DislikedFoods", "FavoriteFoods"),
        PersonaKeySchema::new("Personality", Complex),
        PersonaKeySchema::new("Relationship", Complex),
    ]
}

pub fn validate_schema(schema: &[PersonaKeySchema]) -> Result<(), ConfigError> {
    let invalid = |m: String| Err(ConfigError::Invalid(m));
    if schema.is_empty() {
        return invalid("persona schema is empty".into());
    }
    let mut by_name = BTreeMap::new();
    for entry in schema {
        if entry.key_name.trim().is_empty() {
            return invalid("persona key with empty name".into());
        }
        if by_name.insert(entry.key_name.as_str(), entry).is_some() {
            return invalid(format!("duplicate persona key {:?}", entry.key_name));
        }
    }
    for entry in schema {
        match (&entry.category, &entry.conflict_partner) {
            (KeyCategory::Contradictory, Some(partner)) => {
                let Some(other) = by_name.get(partner.as_str()) else {
                    return invalid(format!("{:?}: unknown conflict partner {partner:?}", entry.key_name));
                };
                if partner == &entry.key_name
                    || other.category != KeyCategory::Contradictory
                    || other.conflict_partner.as_deref() != Some(entry.key_name.as_str())
                {
                    return invalid(format!(
                        "{:?} and {partner:?} must name each other as conflict partners",
                        entry.key_name
                    ));
                }
            }
            (KeyCategory::Contradictory, None) => {
                return invalid(format!("{:?}: contradictory key needs a partner", entry.key_name));
            }
            (_, Some(_)) => {
                return invalid(format!("{:?}: only contradictory keys take a partner", entry.key_name));
            }
            (_, None) => {}
        }
    }
    Ok(())
}

/// Reads a schema file: a JSON list of `{key_name, category, conflict_partner}`.
pub fn load_schema(path: &Path) -> Result<Vec<PersonaKeySchema>, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::Parse(format!("{}: {e}", path.display())))?;
    let schema: Vec<PersonaKeySchema> =
        serde_json::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    validate_schema(&schema)?;
    Ok(schema)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonaValue {
    pub value: String,
    pub stamp: u64,
}

impl PersonaValue {
    pub fn new(value: String, stamp: u64) -> Self {
        Self { value, stamp }
    }
}

/// Per-window extraction result.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonaSnapshot {
    pub window_span: (u64, u64),
    /// Every schema key, with an empty list when nothing was reported.
    pub entries: BTreeMap<String, Vec<String>>,
    /// Keys the backend reported that are not in the schema.
    #[serde(default)]
    pub dropped_keys: Vec<String>,
}

/// Cumulative profile.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonaSketch {
    pub entries: BTreeMap<String, Vec<PersonaValue>>,
    pub last_snapshot_round: u64,
}

impl PersonaSketch {
    pub fn values(&self, key: &str) -> Vec<String> {
        self.entries
            .get(key)
            .map(|vs| vs.iter().map(|v| v.value.clone()).collect())
            .unwrap_or_default()
    }

    /// `key: v1; v2; …`, or `None` when the key holds nothing.
    pub fn render_key(&self, key: &str) -> Option<String> {
        let values = self.values(key);
        (!values.is_empty()).then(|| format!("{key}: {}", values.join("; ")))
    }
}

fn window_text(window: &[Round]) -> String {
    window
        .iter()
        .flat_map(|r| [&r.first, &r.second])
        .map(|t| format!("{}: {}", t.speaker.label(), t.text.replace('\n', " ")))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Asks the extractor for a snapshot of `window`.
pub fn extract_snapshot(
    window: &[Round],
    schema: &[PersonaKeySchema],
    backend: &dyn TextGenerator,
    prompts: &PromptSet,
    max_length: usize,
    budget: &mut CallBudget,
) -> Result<PersonaSnapshot> {
    let (Some(first), Some(last)) = (window.first(), window.last()) else {
        return Err(EngineError::Invariant("snapshot window is empty".into()));
    };
    let keys = schema
        .iter()
        .map(|k| format!("- {}", k.key_name))
        .collect::<Vec<_>>()
        .join("\n");
    let prompt = render(
        &prompts.persona_snapshot,
        &[("keys", &keys), ("dialogue", &window_text(window))],
    );
    budget.charge(CallKind::Extract)?;
    let raw = backend.generate(&prompt, max_length)?;
    let mut snapshot = parse_snapshot(&raw, schema)?;
    snapshot.window_span = (first.index, last.index);
    Ok(snapshot)
}

/// Parses the first JSON object in `raw` into a snapshot over `schema`.
pub fn parse_snapshot(raw: &str, schema: &[PersonaKeySchema]) -> Result<PersonaSnapshot, ParseError> {
    let err = |reason: String| ParseError {
        what: "persona snapshot",
        reason,
        raw: raw.to_string(),
    };
    let (Some(start), Some(end)) = (raw.find('{'), raw.rfind('}')) else {
        return Err(err("no JSON object".into()));
    };
    if end < start {
        return Err(err("no JSON object".into()));
    }
    let value: Value = serde_json::from_str(&raw[start..=end]).map_err(|e| err(e.to_string()))?;
    let Value::Object(map) = value else {
        return Err(err("not an object".into()));
    };

    let mut snapshot = PersonaSnapshot {
        entries: schema.iter().map(|k| (k.key_name.clone(), Vec::new())).collect(),
        ..PersonaSnapshot::default()
    };
    for (key, value) in map {
        let Some(slot) = snapshot.entries.get_mut(&key) else {
            warn!(key = %key, "dropping persona key not in schema");
            snapshot.dropped_keys.push(key);
            continue;
        };
        let items = match value {
            Value::Array(items) => items,
            Value::Null => Vec::new(),
            other => vec![other],
        };
        for item in items {
            let s = match item {
                Value::String(s) => s,
                Value::Number(n) => n.to_string(),
                Value::Bool(b) => b.to_string(),
                Value::Null => continue,
                _ => return Err(err(format!("value of {key:?} is not a string"))),
            };
            let s = s.trim().to_string();
            if !s.is_empty() && !slot.contains(&s) {
                slot.push(s);
            }
        }
    }
    Ok(snapshot)
}

/// Persona branch state carried between rounds.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PcbState {
    /// Rounds since the last snapshot.
    pub window: Vec<Round>,
    pub sketch: PersonaSketch,
}

#[derive(Debug, Clone, Serialize)]
pub struct KeyFailure {
    pub key: String,
    pub error: String,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct PcbOutcome {
    pub snapshot: Option<PersonaSnapshot>,
    /// Persona items created or rewritten.
    pub updated: Vec<MemoryId>,
    /// Persona items removed because their key emptied.
    pub removed: Vec<MemoryId>,
    /// Keys whose merge failed and were left unchanged.
    pub failures: Vec<KeyFailure>,
}

/// Merges one key's snapshot values into the sketch with its category's
/// strategy.
pub fn merge_key(
    sketch: &mut PersonaSketch,
    entry: &PersonaKeySchema,
    new_values: &[String],
    config: &PcbConfig,
    backends: &Backends,
    prompts: &PromptSet,
    budget: &mut CallBudget,
) -> Result<()> {
    let key = entry.key_name.as_str();
    match entry.category {
        KeyCategory::Replace => merge_replace(sketch, key, new_values),
        KeyCategory::Append => merge_append(sketch, key, new_values),
        KeyCategory::Trajectory => merge_trajectory(sketch, key, new_values),
        KeyCategory::Contradictory => {
            let partner = entry
                .conflict_partner
                .as_deref()
                .ok_or_else(|| EngineError::Invariant(format!("{key} has no partner")))?;
            merge_contradictory(
                sketch,
                key,
                partner,
                new_values,
                backends.scorer.as_ref(),
                config.contradiction_threshold,
            )?
        }
        KeyCategory::Complex => merge_complex(
            sketch,
            key,
            new_values,
            backends.merger.as_ref(),
            prompts,
            config.merge_max_length,
            budget,
        )?,
    }
    Ok(())
}

/// Runs the branch for one completed round. Extraction errors abort the
/// step; a failed key merge leaves that key unchanged and is reported in
/// [`PcbOutcome::failures`].
pub fn pcb_step(
    state: &mut PcbState,
    pool: &mut MemoryPool,
    round: Round,
    config: &PcbConfig,
    backends: &Backends,
    prompts: &PromptSet,
    budget: &mut CallBudget,
) -> Result<PcbOutcome> {
    let now = round.index;
    state.window.push(round);
    if now < state.sketch.last_snapshot_round + config.snapshot_interval_rounds {
        return Ok(PcbOutcome::default());
    }

    let snapshot = extract_snapshot(
        &state.window,
        &config.schema,
        backends.extractor.as_ref(),
        prompts,
        config.extraction_max_length,
        budget,
    )?;
    let span_turns = (
        state.window[0].first.turn_index,
        state.window[state.window.len() - 1].second.turn_index,
    );
    state.window.clear();
    state.sketch.last_snapshot_round = now;

    let mut outcome = PcbOutcome::default();
    let before = state.sketch.entries.clone();
    for entry in &config.schema {
        let new_values = &snapshot.entries[&entry.key_name];
        if new_values.is_empty() {
            continue;
        }
        let mut trial = state.sketch.clone();
        match merge_key(&mut trial, entry, new_values, config, backends, prompts, budget) {
            Ok(()) => state.sketch = trial,
            Err(e) => {
                warn!(key = %entry.key_name, error = %e, "persona merge failed");
                outcome.failures.push(KeyFailure {
                    key: entry.key_name.clone(),
                    error: e.to_string(),
                });
            }
        }
    }

    for entry in &config.schema {
        let key = entry.key_name.as_str();
        if before.get(key) == state.sketch.entries.get(key) {
            continue;
        }
        let existing = pool.find_persona(key).map(|m| m.id);
        match (state.sketch.render_key(key), existing) {
            (Some(text), Some(id)) => {
                let item = pool.get_mut(id).expect("found above");
                item.text = text;
                item.source_span = (item.source_span.0.min(span_turns.0), span_turns.1);
                outcome.updated.push(id);
            }
            (Some(text), None) => {
                let id = pool.allocate_id();
                let mut item = MemoryItem::new(id, MemoryKind::PersonaFact, text, now, span_turns);
                item.persona_key = Some(key.to_string());
                pool.insert(item);
                outcome.updated.push(id);
            }
            (None, Some(id)) => {
                pool.remove(id);
                outcome.removed.push(id);
            }
            (None, None) => {}
        }
    }
    outcome.snapshot = Some(snapshot);
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{MockBehavior, MockGenerator};
    use crate::types::{DialogueTurn, Speaker};
    use std::sync::Arc;

    fn round(i: u64, user: &str) -> Round {
        let t = 2 * (i - 1);
        Round {
            index: i,
            first: DialogueTurn::new("s", t, Speaker::User, user),
            second: DialogueTurn::new("s", t + 1, Speaker::Chatbot, "I see."),
        }
    }

    #[test]
    fn default_schema_is_valid_and_total() {
        let schema = default_schema();
        validate_schema(&schema).unwrap();
        assert_eq!(schema.len(), 16);
        for name in ["Name", "Preferences", "Profession", "FavoriteAnimals", "DislikedAnimals"] {
            assert!(schema.iter().any(|k| k.key_name == name));
        }
    }

    #[test]
    fn schema_validation_errors() {
        let mut s = default_schema();
        s.push(PersonaKeySchema::new("Name", KeyCategory::Append));
        assert!(validate_schema(&s).is_err());
        assert!(validate_schema(&[]).is_err());
        let one_sided = vec![
            PersonaKeySchema::contradictory("A", "B"),
            PersonaKeySchema::new("B", KeyCategory::Append),
        ];
        assert!(validate_schema(&one_sided).is_err());
        let stray = vec![PersonaKeySchema {
            key_name: "A".into(),
            category: KeyCategory::Replace,
            conflict_partner: Some("B".into()),
        }];
        assert!(validate_schema(&stray).is_err());
    }

    #[test]
    fn schema_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("schema.json");
        std::fs::write(&path, serde_json::to_string(&default_schema()).unwrap()).unwrap();
        assert_eq!(load_schema(&path).unwrap(), default_schema());
    }

    fn extract(gen: MockGenerator) -> Result<PersonaSnapshot> {
        let window = vec![round(1, "Hello, my name is Wei.")];
        let mut budget = CallBudget::new(4);
        extract_snapshot(&window, &default_schema(), &gen, &PromptSet::default(), 1024, &mut budget)
    }

    #[test]
    fn extraction_passes_mock_output() {
        let snap = extract(MockGenerator::fixed_json(r#"{"Name":["Wei"]}"#)).unwrap();
        assert_eq!(snap.entries["Name"], vec!["Wei".to_string()]);
        assert!(snap.entries["Age"].is_empty());
        assert_eq!(snap.window_span, (1, 1));
        let snap = extract(MockGenerator::new(MockBehavior::PatternPersona)).unwrap();
        assert_eq!(snap.entries["Name"], vec!["Wei".to_string()]);
    }

    #[test]
    fn extraction_drops_unknown_keys() {
        let snap = extract(MockGenerator::fixed_json(r#"{"Shoe Size":["42"],"Age":25}"#)).unwrap();
        assert_eq!(snap.dropped_keys, vec!["Shoe Size".to_string()]);
        assert!(!snap.entries.contains_key("Shoe Size"));
        assert_eq!(snap.entries["Age"], vec!["25".to_string()]);
    }

    #[test]
    fn extraction_of_empty_object() {
        let snap = extract(MockGenerator::fixed_json("{}")).unwrap();
        assert_eq!(snap.entries.len(), default_schema().len());
        assert!(snap.entries.values().all(Vec::is_empty));
    }

    #[test]
    fn extraction_parse_error_carries_raw() {
        match extract(MockGenerator::fixed_json("not json")) {
            Err(EngineError::Parse(p)) => assert_eq!(p.raw, "not json"),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    fn backends_with(extractor: MockGenerator) -> Backends {
        let mut b = Backends::mock(MockBehavior::TemplateSum);
        b.extractor = Arc::new(extractor);
        b
    }

    fn run(state: &mut PcbState, pool: &mut MemoryPool, b: &Backends, cfg: &PcbConfig, i: u64, text: &str) -> PcbOutcome {
        let mut budget = CallBudget::new(16);
        pool.advance_to(i);
        pcb_step(state, pool, round(i, text), cfg, b, &PromptSet::default(), &mut budget).unwrap()
    }

    #[test]
    fn snapshots_fire_on_interval() {
        let b = backends_with(MockGenerator::fixed_json("{}"));
        let cfg = PcbConfig::default();
        let mut state = PcbState::default();
        let mut pool = MemoryPool::new(None);
        for i in 1..=15 {
            let out = run(&mut state, &mut pool, &b, &cfg, i, "hi");
            match i {
                10 => assert_eq!(out.snapshot.unwrap().window_span, (1, 10)),
                _ => assert!(out.snapshot.is_none(), "round {i}"),
            }
        }
        assert_eq!(state.window.len(), 5);
    }

    #[test]
    fn one_item_per_touched_key() {
        let schema = vec![
            PersonaKeySchema::new("Name", KeyCategory::Replace),
            PersonaKeySchema::new("Age", KeyCategory::Replace),
            PersonaKeySchema::new("Skills", KeyCategory::Append),
        ];
        let cfg = PcbConfig {
            schema,
            snapshot_interval_rounds: 1,
            ..PcbConfig::default()
        };
        let b = backends_with(MockGenerator::new(MockBehavior::PatternPersona));
        let mut state = PcbState::default();
        let mut pool = MemoryPool::new(None);
        let out = run(&mut state, &mut pool, &b, &cfg, 1, "my name is Wei");
        assert_eq!(out.updated.len(), 1);
        assert_eq!(pool.len(), 1);
        let id = out.updated[0];
        assert_eq!(pool.get(id).unwrap().text, "Name: Wei");

        // retrieval bookkeeping survives a rewrite
        pool.get_mut(id).unwrap().record_retrieval(1, 64);
        pool.get_mut(id).unwrap().suppress();
        let out = run(&mut state, &mut pool, &b, &cfg, 2, "my name is Lan");
        assert_eq!(out.updated, vec![id]);
        let item = pool.get(id).unwrap();
        assert_eq!(item.text, "Name: Lan");
        assert_eq!(item.retrieval_rounds, vec![1]);
        assert_eq!(item.suppression_halvings, 1);
        assert_eq!(item.creation_round, 1);

        // unchanged values do not rewrite the item
        let out = run(&mut state, &mut pool, &b, &cfg, 3, "my name is Lan");
        assert!(out.updated.is_empty());
    }

    #[test]
    fn contradiction_removes_emptied_partner_item() {
        let cfg = PcbConfig {
            snapshot_interval_rounds: 1,
            ..PcbConfig::default()
        };
        let b = backends_with(MockGenerator::new(MockBehavior::PatternPersona));
        let mut state = PcbState::default();
        let mut pool = MemoryPool::new(None);
        run(&mut state, &mut pool, &b, &cfg, 1, "my favorite animal is cats");
        let fav = pool.find_persona("FavoriteAnimals").unwrap().id;
        let out = run(&mut state, &mut pool, &b, &cfg, 2, "the animal i dislike is cats");
        assert_eq!(out.removed, vec![fav]);
        assert!(!pool.contains(fav));
        assert_eq!(pool.find_persona("DislikedAnimals").unwrap().text, "DislikedAnimals: cats");
    }

    #[test]
    fn failed_key_merge_is_isolated() {
        let mut b = backends_with(MockGenerator::fixed_json(
            r#"{"Name":["Wei"],"Personality":["shy"]}"#,
        ));
        b.merger = Arc::new(MockGenerator::new(MockBehavior::Fail("merger down".into())));
        let cfg = PcbConfig {
            snapshot_interval_rounds: 1,
            ..PcbConfig::default()
        };
        let mut state = PcbState::default();
        let mut pool = MemoryPool::new(None);
        let out = run(&mut state, &mut pool, &b, &cfg, 1, "x");
        assert_eq!(out.failures.len(), 1);
        assert_eq!(out.failures[0].key, "Personality");
        assert_eq!(state.sketch.values("Name"), vec!["Wei".to_string()]);
        assert!(state.sketch.values("Personality").is_empty());
    }
}
