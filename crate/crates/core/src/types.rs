//! Dialogue and memory domain types.
//!
//! A *turn* is one utterance by one speaker. A *round* is a pair of
//! consecutive turns: an utterance and its direct response. Rounds are
//! numbered from 1; turn `t` belongs to round `t / 2 + 1`.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    User,
    Chatbot,
}

impl Speaker {
    pub fn other(self) -> Speaker {
        match self {
            Speaker::User => Speaker::Chatbot,
            Speaker::Chatbot => Speaker::User,
        }
    }

    /// Short label used in packaged narrative text.
    pub fn label(self) -> &'static str {
        match self {
            Speaker::User => "user",
            Speaker::Chatbot => "bot",
        }
    }
}

/// Round number (1-based) that contains the given turn index.
pub fn round_of(turn_index: u64) -> u64 {
    turn_index / 2 + 1
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueTurn {
    pub session_id: String,
    pub turn_index: u64,
    pub speaker: Speaker,
    pub text: String,
    /// Derived from `turn_index`; recomputed on ingestion.
    #[serde(default)]
    pub round_index: u64,
}

impl DialogueTurn {
    pub fn new(
        session_id: impl Into<String>,
        turn_index: u64,
        speaker: Speaker,
        text: impl Into<String>,
    ) -> Self {
        Self {
            session_id: session_id.into(),
            turn_index,
            speaker,
            text: text.into(),
            round_index: round_of(turn_index),
        }
    }
}

/// A completed exchange: an utterance and its direct response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Round {
    pub index: u64,
    pub first: DialogueTurn,
    pub second: DialogueTurn,
}

impl Round {
    /// Both utterances joined, used as the default retrieval query.
    pub fn text(&self) -> String {
        format!("{} {}", self.first.text, self.second.text)
    }

    pub fn turn_span(&self) -> (u64, u64) {
        (self.first.turn_index, self.second.turn_index)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub session_id: String,
    pub turns: Vec<DialogueTurn>,
}

impl Transcript {
    pub fn new(session_id: impl Into<String>) -> Self {
        Self {
            session_id: session_id.into(),
            turns: Vec::new(),
        }
    }

    /// Builds a transcript from alternating utterances, starting with `first`.
    pub fn alternating<I, S>(session_id: &str, first: Speaker, texts: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut speaker = first;
        let turns = texts
            .into_iter()
            .enumerate()
            .map(|(i, text)| {
                let turn = DialogueTurn::new(session_id, i as u64, speaker, text);
                speaker = speaker.other();
                turn
            })
            .collect();
        Self {
            session_id: session_id.to_string(),
            turns,
        }
    }

    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }

    /// Trailing turn that has no response yet.
    pub fn pending_turn(&self) -> Option<&DialogueTurn> {
        if self.turns.len() % 2 == 1 {
            self.turns.last()
        } else {
            None
        }
    }
}

/// Pairs consecutive turns into rounds. A trailing unpaired turn is left out.
pub fn pair_rounds(transcript: &Transcript) -> Vec<(DialogueTurn, DialogueTurn)> {
    transcript
        .turns
        .chunks_exact(2)
        .map(|pair| (pair[0].clone(), pair[1].clone()))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MemoryId(pub u64);

impl fmt::Display for MemoryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "m{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryKind {
    NarrativeLevel1,
    NarrativeLevel2,
    NarrativeLevel3,
    PersonaFact,
}

impl MemoryKind {
    pub fn narrative(level: u8) -> Option<MemoryKind> {
        match level {
            1 => Some(MemoryKind::NarrativeLevel1),
            2 => Some(MemoryKind::NarrativeLevel2),
            3 => Some(MemoryKind::NarrativeLevel3),
            _ => None,
        }
    }

    pub fn level(self) -> Option<u8> {
        match self {
            MemoryKind::NarrativeLevel1 => Some(1),
            MemoryKind::NarrativeLevel2 => Some(2),
            MemoryKind::NarrativeLevel3 => Some(3),
            MemoryKind::PersonaFact => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MemoryKind::NarrativeLevel1 => "narrative_level1",
            MemoryKind::NarrativeLevel2 => "narrative_level2",
            MemoryKind::NarrativeLevel3 => "narrative_level3",
            MemoryKind::PersonaFact => "persona_fact",
        }
    }
}

/// Halvings are capped so the factor stays a normal, positive f64.
pub const MAX_SUPPRESSION_HALVINGS: u32 = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryItem {
    pub id: MemoryId,
    pub kind: MemoryKind,
    pub text: String,
    /// Round in which the memory was created.
    pub creation_round: u64,
    /// Rounds in which the memory was retrieved as relevant, ascending.
    pub retrieval_rounds: Vec<u64>,
    /// Suppression factor is `0.5^suppression_halvings`.
    pub suppression_halvings: u32,
    /// First and last turn index the memory was derived from.
    pub source_span: (u64, u64),
    /// Pending aggregation into a higher narrative level; never evicted.
    #[serde(default)]
    pub exempt: bool,
    /// Persona key this item materializes, for persona facts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub persona_key: Option<String>,
    /// Cached unsuppressed score for the current round. Derived state,
    /// recomputed on load.
    #[serde(skip)]
    pub last_score: f64,
}

impl MemoryItem {
    pub fn new(
        id: MemoryId,
        kind: MemoryKind,
        text: impl Into<String>,
        creation_round: u64,
        source_span: (u64, u64),
    ) -> Self {
        Self {
            id,
            kind,
            text: text.into(),
            creation_round,
            retrieval_rounds: Vec::new(),
            suppression_halvings: 0,
            source_span,
            exempt: false,
            persona_key: None,
            last_score: 0.0,
        }
    }

    pub fn suppression_factor(&self) -> f64 {
        0.5f64.powi(self.suppression_halvings as i32)
    }

    pub fn effective_score(&self) -> f64 {
        self.last_score * self.suppression_factor()
    }

    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }

    /// Records a relevant retrieval, keeping at most `cap` most recent rounds.
    pub fn record_retrieval(&mut self, round: u64, cap: usize) {
        let pos = self.retrieval_rounds.partition_point(|&r| r <= round);
        self.retrieval_rounds.insert(pos, round);
        if self.retrieval_rounds.len() > cap {
            let excess = self.retrieval_rounds.len() - cap;
            self.retrieval_rounds.drain(..excess);
        }
    }

    pub fn suppress(&mut self) {
        self.suppression_halvings = (self.suppression_halvings + 1).min(MAX_SUPPRESSION_HALVINGS);
    }
}

/// The memory pool every branch reads from and writes to.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MemoryPool {
    #[serde(with = "items_as_vec")]
    items: BTreeMap<MemoryId, MemoryItem>,
    pub capacity_chars: Option<usize>,
    current_round: u64,
    next_id: u64,
}

impl MemoryPool {
    pub fn new(capacity_chars: Option<usize>) -> Self {
        Self {
            capacity_chars,
            ..Self::default()
        }
    }

    pub fn current_round(&self) -> u64 {
        self.current_round
    }

    /// Moves the round counter forward; it never goes back.
    pub fn advance_to(&mut self, round: u64) {
        self.current_round = self.current_round.max(round);
    }

    /// Ids are handed out sequentially and never reused.
    pub fn allocate_id(&mut self) -> MemoryId {
        let id = MemoryId(self.next_id);
        self.next_id += 1;
        id
    }

    pub fn insert(&mut self, item: MemoryItem) {
        debug_assert!(item.id.0 < self.next_id, "ids must come from allocate_id");
        self.items.insert(item.id, item);
    }

    pub fn remove(&mut self, id: MemoryId) -> Option<MemoryItem> {
        self.items.remove(&id)
    }

    pub fn get(&self, id: MemoryId) -> Option<&MemoryItem> {
        self.items.get(&id)
    }

    pub fn get_mut(&mut self, id: MemoryId) -> Option<&mut MemoryItem> {
        self.items.get_mut(&id)
    }

    pub fn contains(&self, id: MemoryId) -> bool {
        self.items.contains_key(&id)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Items in id order.
    pub fn iter(&self) -> impl Iterator<Item = &MemoryItem> {
        self.items.values()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut MemoryItem> {
        self.items.values_mut()
    }

    pub fn ids(&self) -> Vec<MemoryId> {
        self.items.keys().copied().collect()
    }

    pub fn total_chars(&self) -> usize {
        self.items.values().map(MemoryItem::char_len).sum()
    }

    pub fn count_kind(&self, kind: MemoryKind) -> usize {
        self.items.values().filter(|m| m.kind == kind).count()
    }

    pub fn find_persona(&self, key: &str) -> Option<&MemoryItem> {
        self.items
            .values()
            .find(|m| m.persona_key.as_deref() == Some(key))
    }
}

mod items_as_vec {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use super::{MemoryId, MemoryItem};

    pub fn serialize<S: Serializer>(
        items: &BTreeMap<MemoryId, MemoryItem>,
        s: S,
    ) -> Result<S::Ok, S::Error> {
        let v: Vec<&MemoryItem> = items.values().collect();
        v.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> Result<BTreeMap<MemoryId, MemoryItem>, D::Error> {
        let v = Vec::<MemoryItem>::deserialize(d)?;
        let mut map = BTreeMap::new();
        for item in v {
            if map.insert(item.id, item).is_some() {
                return Err(serde::de::Error::custom("duplicate memory id"));
            }
        }
        Ok(map)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn transcript(n: usize) -> Transcript {
        Transcript::alternating("s", Speaker::User, (0..n).map(|i| format!("t{i}")))
    }

    #[test]
    fn pairing_counts() {
        assert_eq!(pair_rounds(&transcript(4)).len(), 2);
        let five = transcript(5);
        assert_eq!(pair_rounds(&five).len(), 2);
        assert_eq!(five.pending_turn().map(|t| t.turn_index), Some(4));
        assert!(pair_rounds(&transcript(0)).is_empty());
    }

    #[test]
    fn pairs_keep_order() {
        let rounds = pair_rounds(&transcript(6));
        for (i, (a, b)) in rounds.iter().enumerate() {
            assert_eq!(a.turn_index, 2 * i as u64);
            assert_eq!(b.turn_index, 2 * i as u64 + 1);
            assert_eq!(a.round_index, i as u64 + 1);
            assert_eq!(b.round_index, i as u64 + 1);
        }
    }

    #[test]
    fn retrieval_history_is_capped_and_sorted() {
        let mut m = MemoryItem::new(MemoryId(0), MemoryKind::PersonaFact, "x", 0, (0, 0));
        for r in 1..=70 {
            m.record_retrieval(r, 64);
        }
        assert_eq!(m.retrieval_rounds.len(), 64);
        assert_eq!(m.retrieval_rounds[0], 7);
        assert_eq!(*m.retrieval_rounds.last().unwrap(), 70);
    }

    #[test]
    fn suppression_is_power_of_half() {
        let mut m = MemoryItem::new(MemoryId(0), MemoryKind::PersonaFact, "x", 0, (0, 0));
        assert_eq!(m.suppression_factor(), 1.0);
        m.suppress();
        m.suppress();
        assert_eq!(m.suppression_factor(), 0.25);
        for _ in 0..5000 {
            m.suppress();
        }
        assert!(m.suppression_factor() > 0.0);
    }

    #[test]
    fn pool_ids_are_not_reused() {
        let mut pool = MemoryPool::new(None);
        let a = pool.allocate_id();
        pool.insert(MemoryItem::new(a, MemoryKind::PersonaFact, "a", 0, (0, 0)));
        pool.remove(a);
        let b = pool.allocate_id();
        assert_ne!(a, b);
    }

    #[test]
    fn round_counter_is_monotone() {
        let mut pool = MemoryPool::new(None);
        pool.advance_to(5);
        pool.advance_to(3);
        assert_eq!(pool.current_round(), 5);
    }

    proptest::proptest! {
        #[test]
        fn round_count_is_half_turn_count(n in 0usize..200) {
            proptest::prop_assert_eq!(pair_rounds(&transcript(n)).len(), n / 2);
        }
    }
}
