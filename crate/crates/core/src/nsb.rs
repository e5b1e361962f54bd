//! Narrative summarization branch.
//!
//! Completed rounds are buffered and packaged verbatim into level-1 units
//! of `theta1` rounds. Whenever `theta2` level-1 units are pending they are
//! summarized by the text backend into one level-2 unit, and `theta3`
//! level-2 units likewise into one level-3 unit. Level 3 is the top.
//!
//! Units consumed by a summary stay in the memory pool as ordinary,
//! forgettable memories. Units still waiting for siblings are flagged
//! exempt so that eviction cannot break the hierarchy.

use serde::{Deserialize, Serialize};

use crate::backends::{CallBudget, CallKind, TextGenerator};
use crate::config::NsbConfig;
use crate::error::{EngineError, Result};
use crate::prompts::{render, PromptSet};
use crate::types::{MemoryId, MemoryItem, MemoryKind, MemoryPool, Round};

pub const TOP_LEVEL: u8 = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NarrativeUnit {
    pub id: MemoryId,
    pub level: u8,
    /// 1-based position among the units of the same level.
    pub index_at_level: u64,
    pub text: String,
    /// Child unit ids, empty at level 1.
    pub children: Vec<MemoryId>,
    pub span_rounds: (u64, u64),
    pub span_turns: (u64, u64),
}

/// Buffers and pending queues of the branch.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NsbState {
    /// Completed rounds not yet packaged.
    pub buffer: Vec<Round>,
    pub pending_level1: Vec<NarrativeUnit>,
    pub pending_level2: Vec<NarrativeUnit>,
    /// Units produced so far at levels 1, 2 and 3.
    pub produced: [u64; 3],
}

impl NsbState {
    pub fn produced(&self, level: u8) -> u64 {
        self.produced[(level - 1) as usize]
    }

    /// Ids of units still waiting for siblings.
    pub fn pending_ids(&self) -> impl Iterator<Item = MemoryId> + '_ {
        self.pending_level1
            .iter()
            .chain(&self.pending_level2)
            .map(|u| u.id)
    }

    fn pending_mut(&mut self, level: u8) -> &mut Vec<NarrativeUnit> {
        match level {
            1 => &mut self.pending_level1,
            _ => &mut self.pending_level2,
        }
    }
}

/// Text of a level-1 unit: one `round k <U+2014> user: ...; bot: ...` line per round.
pub fn level1_text(rounds: &[Round]) -> String {
    rounds
        .iter()
        .map(|r| {
            format!(
                "round {} — {}: {}; {}: {}",
                r.index,
                r.first.speaker.label(),
                r.first.text,
                r.second.speaker.label(),
                r.second.text
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Packages the oldest `theta1` buffered rounds into a level-1 unit and
/// removes them from the buffer. Returns `None` below the threshold.
pub fn package_level1(
    buffer: &mut Vec<Round>,
    config: &NsbConfig,
    id: impl FnOnce() -> MemoryId,
    index_at_level: u64,
) -> Option<NarrativeUnit> {
    if buffer.len() < config.theta1 {
        return None;
    }
    let rounds: Vec<Round> = buffer.drain(..config.theta1).collect();
    let first = rounds.first().expect("theta1 >= 2");
    let last = rounds.last().expect("theta1 >= 2");
    Some(NarrativeUnit {
        id: id(),
        level: 1,
        index_at_level,
        text: level1_text(&rounds),
        children: Vec::new(),
        span_rounds: (first.index, last.index),
        span_turns: (first.first.turn_index, last.second.turn_index),
    })
}

/// Summarizes the first `theta_{level+1}` units of `level` into one unit of
/// `level + 1`. Returns `None` when fewer units are available.
#[allow(clippy::too_many_arguments)]
pub fn summarize_level(
    units: &[NarrativeUnit],
    level: u8,
    backend: &dyn TextGenerator,
    config: &NsbConfig,
    prompts: &PromptSet,
    budget: &mut CallBudget,
    id: impl FnOnce() -> MemoryId,
    index_at_level: u64,
) -> Result<Option<NarrativeUnit>> {
    if !(1..TOP_LEVEL).contains(&level) {
        return Err(EngineError::Invariant(format!("cannot summarize level {level}")));
    }
    let target = level + 1;
    let fan_in = config.fan_in(target);
    if units.len() < fan_in {
        return Ok(None);
    }
    let children = &units[..fan_in];
    if let Some(bad) = children.iter().find(|u| u.level != level) {
        return Err(EngineError::Invariant(format!(
            "unit {} is level {}, expected {level}",
            bad.id, bad.level
        )));
    }
    if children.windows(2).any(|w| w[1].span_rounds.0 != w[0].span_rounds.1 + 1) {
        return Err(EngineError::Invariant("child spans are not contiguous".into()));
    }

    let ids = children
        .iter()
        .map(|u| u.id.0.to_string())
        .collect::<Vec<_>>()
        .join(",");
    let segments = children
        .iter()
        .map(|u| format!("[{}] {}", u.id.0, u.text))
        .collect::<Vec<_>>()
        .join("\n");
    let prompt = render(
        prompts.summarize(target),
        &[
            ("count", &fan_in.to_string()),
            ("level", &level.to_string()),
            ("max_length", &config.summary_max_length.to_string()),
            ("ids", &ids),
            ("segments", &segments),
        ],
    );
    budget.charge(CallKind::Summarize { level: target })?;
    let text = backend.generate(&prompt, config.summary_max_length)?;
    let text = if text.trim().is_empty() {
        // an empty summary would be an empty memory; keep the ids instead
        format!("[level {target} summary of {ids}]")
    } else {
        text
    };
    let first = &children[0];
    let last = &children[fan_in - 1];
    Ok(Some(NarrativeUnit {
        id: id(),
        level: target,
        index_at_level,
        text,
        children: children.iter().map(|u| u.id).collect(),
        span_rounds: (first.span_rounds.0, last.span_rounds.1),
        span_turns: (first.span_turns.0, last.span_turns.1),
    }))
}

fn to_item(unit: &NarrativeUnit, round: u64) -> MemoryItem {
    let kind = MemoryKind::narrative(unit.level).expect("levels 1..=3");
    let mut item = MemoryItem::new(unit.id, kind, unit.text.clone(), round, unit.span_turns);
    item.exempt = unit.level < TOP_LEVEL;
    item
}

/// Runs the branch for one completed round: buffer, package, then cascade
/// summaries. Returns the ids of the memories created.
///
/// On error the caller must discard `state` and `pool`; partial progress is
/// not rolled back here.
pub fn nsb_step(
    state: &mut NsbState,
    pool: &mut MemoryPool,
    round: Round,
    config: &NsbConfig,
    backend: &dyn TextGenerator,
    prompts: &PromptSet,
    budget: &mut CallBudget,
) -> Result<Vec<MemoryId>> {
    let now = round.index;
    state.buffer.push(round);
    let mut created = Vec::new();

    let index = state.produced[0] + 1;
    if let Some(unit) = package_level1(&mut state.buffer, config, || pool.allocate_id(), index) {
        state.produced[0] += 1;
        pool.insert(to_item(&unit, now));
        created.push(unit.id);
        state.pending_level1.push(unit);
    }

    for level in 1..TOP_LEVEL {
        let target = level + 1;
        let index = state.produced[target as usize - 1] + 1;
        let summary = summarize_level(
            state.pending_mut(level),
            level,
            backend,
            config,
            prompts,
            budget,
            || pool.allocate_id(),
            index,
        )?;
        let Some(unit) = summary else { continue };
        let fan_in = config.fan_in(target);
        for child in state.pending_mut(level).drain(..fan_in) {
            if let Some(item) = pool.get_mut(child.id) {
                item.exempt = false;
            }
        }
        state.produced[target as usize - 1] += 1;
        pool.insert(to_item(&unit, now));
        created.push(unit.id);
        if target < TOP_LEVEL {
            state.pending_mut(target).push(unit);
        }
    }
    Ok(created)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{CountingGenerator, MockGenerator};
    use crate::types::{DialogueTurn, Speaker};
    use std::sync::Arc;

    fn round(i: u64) -> Round {
        let t = 2 * (i - 1);
        Round {
            index: i,
            first: DialogueTurn::new("s", t, Speaker::User, format!("u{i}")),
            second: DialogueTurn::new("s", t + 1, Speaker::Chatbot, format!("b{i}")),
        }
    }

    fn unit(id: u64, level: u8, first_round: u64, len: u64) -> NarrativeUnit {
        NarrativeUnit {
            id: MemoryId(id),
            level,
            index_at_level: id,
            text: format!("unit {id}"),
            children: vec![],
            span_rounds: (first_round, first_round + len - 1),
            span_turns: (2 * (first_round - 1), 2 * (first_round + len - 1) - 1),
        }
    }

    #[test]
    fn package_below_threshold_is_none() {
        let mut buf: Vec<Round> = (1..=5).map(round).collect();
        assert!(package_level1(&mut buf, &NsbConfig::default(), || MemoryId(0), 1).is_none());
        assert_eq!(buf.len(), 5);
    }

    #[test]
    fn package_at_threshold() {
        let mut buf: Vec<Round> = (1..=6).map(round).collect();
        let u = package_level1(&mut buf, &NsbConfig::default(), || MemoryId(7), 1).unwrap();
        assert!(buf.is_empty());
        assert_eq!(u.span_rounds, (1, 6));
        assert_eq!(u.span_turns, (0, 11));
        assert_eq!(u.id, MemoryId(7));
        assert!(u.text.starts_with("round 1 — user: u1; bot: b1\nround 2"));
        assert_eq!(u.text.lines().count(), 6);
    }

    #[test]
    fn summarize_with_template_sum() {
        let units: Vec<NarrativeUnit> = (0..5).map(|i| unit(i, 1, 6 * i + 1, 6)).collect();
        let mut budget = CallBudget::new(10);
        let out = summarize_level(
            &units,
            1,
            &MockGenerator::template_sum(),
            &NsbConfig::default(),
            &PromptSet::default(),
            &mut budget,
            || MemoryId(99),
            1,
        )
        .unwrap()
        .unwrap();
        assert_eq!(out.level, 2);
        assert_eq!(out.text, "SUM[0,1,2,3,4]");
        assert_eq!(out.children.len(), 5);
        assert_eq!(out.span_rounds, (1, 30));
        assert_eq!(budget.counts().summarize_level2, 1);
    }

    #[test]
    fn summarize_below_threshold_makes_no_call() {
        let units: Vec<NarrativeUnit> = (0..4).map(|i| unit(i, 2, 30 * i + 1, 30)).collect();
        let gen = CountingGenerator::new(Arc::new(MockGenerator::template_sum()));
        let mut budget = CallBudget::new(10);
        let out = summarize_level(
            &units,
            2,
            &gen,
            &NsbConfig::default(),
            &PromptSet::default(),
            &mut budget,
            || MemoryId(99),
            1,
        )
        .unwrap();
        assert!(out.is_none());
        assert_eq!(gen.calls(), 0);
    }

    #[test]
    fn summarize_rejects_gaps() {
        let units = vec![unit(0, 1, 1, 6), unit(1, 1, 13, 6), unit(2, 1, 19, 6), unit(3, 1, 25, 6), unit(4, 1, 31, 6)];
        let mut budget = CallBudget::new(10);
        let err = summarize_level(
            &units,
            1,
            &MockGenerator::template_sum(),
            &NsbConfig::default(),
            &PromptSet::default(),
            &mut budget,
            || MemoryId(99),
            1,
        );
        assert!(matches!(err, Err(EngineError::Invariant(_))));
    }

    fn run_rounds(n: u64) -> (NsbState, MemoryPool, Vec<Vec<MemoryId>>) {
        let mut state = NsbState::default();
        let mut pool = MemoryPool::new(None);
        let gen = MockGenerator::template_sum();
        let mut created = Vec::new();
        for i in 1..=n {
            let mut budget = CallBudget::new(16);
            pool.advance_to(i);
            let ids = nsb_step(
                &mut state,
                &mut pool,
                round(i),
                &NsbConfig::default(),
                &gen,
                &PromptSet::default(),
                &mut budget,
            )
            .unwrap();
            created.push(ids);
        }
        (state, pool, created)
    }

    #[test]
    fn cascade_counts_for_300_rounds() {
        let (state, pool, _) = run_rounds(300);
        assert_eq!(state.produced, [50, 10, 2]);
        assert_eq!(pool.count_kind(MemoryKind::NarrativeLevel1), 50);
        assert_eq!(pool.count_kind(MemoryKind::NarrativeLevel2), 10);
        assert_eq!(pool.count_kind(MemoryKind::NarrativeLevel3), 2);
        assert!(state.pending_level1.is_empty());
        assert!(state.pending_level2.is_empty());
    }

    #[test]
    fn per_round_creation() {
        let (_, pool, created) = run_rounds(150);
        assert_eq!(created[5].len(), 1);
        let kinds = |r: usize| -> Vec<MemoryKind> {
            created[r - 1].iter().map(|id| pool.get(*id).unwrap().kind).collect()
        };
        assert_eq!(kinds(6), vec![MemoryKind::NarrativeLevel1]);
        assert_eq!(kinds(30), vec![MemoryKind::NarrativeLevel1, MemoryKind::NarrativeLevel2]);
        assert_eq!(
            kinds(150),
            vec![MemoryKind::NarrativeLevel1, MemoryKind::NarrativeLevel2, MemoryKind::NarrativeLevel3]
        );
        assert!(created[6].is_empty());
    }

    #[test]
    fn pending_units_are_exempt() {
        let (state, pool, _) = run_rounds(42);
        // 7 level-1 units: 5 consumed, 2 pending; 1 level-2 pending
        assert_eq!(state.pending_level1.len(), 2);
        assert_eq!(state.pending_level2.len(), 1);
        for item in pool.iter() {
            let pending = state.pending_ids().any(|id| id == item.id);
            assert_eq!(item.exempt, pending, "item {}", item.id);
        }
    }

    #[test]
    fn backend_failure_is_reported() {
        let mut state = NsbState::default();
        let mut pool = MemoryPool::new(None);
        let gen = MockGenerator::new(crate::backends::MockBehavior::Fail("down".into()));
        let mut err = None;
        for i in 1..=30 {
            let mut budget = CallBudget::new(16);
            if let Err(e) = nsb_step(&mut state, &mut pool, round(i), &NsbConfig::default(), &gen, &PromptSet::default(), &mut budget) {
                err = Some((i, e));
                break;
            }
        }
        let (at, e) = err.expect("level-2 summarization must fail");
        assert_eq!(at, 30);
        assert!(e.is_retriable());
    }

    proptest::proptest! {
        #[test]
        fn level_counts_follow_thresholds(n in 0u64..400, t1 in 2usize..8, t2 in 2usize..6, t3 in 2usize..6) {
            let cfg = NsbConfig { theta1: t1, theta2: t2, theta3: t3, ..NsbConfig::default() };
            let mut state = NsbState::default();
            let mut pool = MemoryPool::new(None);
            let gen = MockGenerator::template_sum();
            for i in 1..=n {
                let mut budget = CallBudget::new(16);
                nsb_step(&mut state, &mut pool, round(i), &cfg, &gen, &PromptSet::default(), &mut budget).unwrap();
            }
            let l1 = n / t1 as u64;
            let l2 = l1 / t2 as u64;
            let l3 = l2 / t3 as u64;
            proptest::prop_assert_eq!(state.produced, [l1, l2, l3]);
            // level-1 spans partition rounds 1..=t1*l1
            let mut spans: Vec<(u64, u64)> = pool.iter()
                .filter(|m| m.kind == MemoryKind::NarrativeLevel1)
                .map(|m| (m.source_span.0 / 2 + 1, m.source_span.1 / 2 + 1))
                .collect();
            spans.sort();
            let mut next = 1;
            for (a, b) in spans {
                proptest::prop_assert_eq!(a, next);
                next = b + 1;
            }
            proptest::prop_assert_eq!(next, t1 as u64 * l1 + 1);
        }
    }
}
