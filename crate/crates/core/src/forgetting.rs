//! Competition-inhibition forgetting and baseline eviction policies.
//!
//! Each completed round every memory is scored as
//!
//! ```text
//! S = alpha / (exp(gamma * (r_c - b)) + (1 - eps)) + beta * sum_{r in R_c} 1 / (r_c - r + eps)
//! ```
//!
//! where `r_c` is the current round, `b` the creation round and `R_c` the
//! rounds in which the memory was retrieved as relevant. Scores are taken
//! before the current round's retrieval is recorded, so `r_c - r >= 1`.
//!
//! The round's query is then reranked against the pool: the top `k` are
//! relevant (they record `r_c` and lose any suppression), the next `k` are
//! noisy (their suppression factor halves), the rest stay untouched.
//! Finally, while the pool exceeds its character capacity, the non-exempt
//! memory with the lowest effective score (score times suppression factor)
//! is evicted.

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::backends::{BackendError, Candidate, Reranker};
use crate::config::{ForgettingConfig, Policy};
use crate::error::{EngineError, Result};
use crate::types::{MemoryId, MemoryItem, MemoryPool};

/// Importance score of `item` at `current_round`, without suppression.
pub fn compute_score(item: &MemoryItem, current_round: u64, config: &ForgettingConfig) -> Result<f64> {
    if current_round < item.creation_round {
        return Err(EngineError::Invariant(format!(
            "{}: current round {current_round} precedes creation round {}",
            item.id, item.creation_round
        )));
    }
    if let Some(r) = item.retrieval_rounds.iter().find(|&&r| r >= current_round) {
        return Err(EngineError::Invariant(format!(
            "{}: retrieval round {r} is not before current round {current_round}",
            item.id
        )));
    }
    Ok(score_terms(item.creation_round, item.retrieval_rounds.iter().copied(), current_round, config))
}

fn score_terms(
    creation_round: u64,
    retrievals: impl Iterator<Item = u64>,
    current_round: u64,
    config: &ForgettingConfig,
) -> f64 {
    let age = (current_round - creation_round) as f64;
    let decay = config.alpha / ((config.gamma * age).exp() + (1.0 - config.epsilon));
    let reinforcement: f64 = retrievals
        .map(|r| 1.0 / ((current_round - r) as f64 + config.epsilon))
        .sum();
    decay + config.beta * reinforcement
}

/// Ebbinghaus retention `exp(-(r_c - b) / s)` with strength `s = 1 + |R_c|`.
pub fn ebbinghaus_retention(item: &MemoryItem, current_round: u64) -> f64 {
    let age = current_round.saturating_sub(item.creation_round) as f64;
    let retrievals = item
        .retrieval_rounds
        .iter()
        .filter(|&&r| r < current_round)
        .count();
    (-age / (1.0 + retrievals as f64)).exp()
}

/// The score a policy ranks by at the start of `current_round`. Retrievals
/// recorded in `current_round` itself are not counted, which makes the value
/// reproducible from saved state at any point of the round.
pub fn policy_score(item: &MemoryItem, current_round: u64, config: &ForgettingConfig) -> f64 {
    match config.policy {
        Policy::Ebbinghaus => ebbinghaus_retention(item, current_round),
        _ => score_terms(
            item.creation_round,
            item.retrieval_rounds.iter().copied().filter(|&r| r < current_round),
            current_round.max(item.creation_round),
            config,
        ),
    }
}

/// Refreshes every item's cached score for `current_round`.
pub fn refresh_scores(pool: &mut MemoryPool, current_round: u64, config: &ForgettingConfig) {
    for item in pool.iter_mut() {
        item.last_score = policy_score(item, current_round, config);
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalPartition {
    pub relevant: Vec<MemoryId>,
    pub noisy: Vec<MemoryId>,
    pub unactivated: Vec<MemoryId>,
}

/// Ranks the pool against `query` and returns every item with its rerank
/// score, most relevant first. Equal rerank scores are ordered by higher
/// unsuppressed score, then older creation round, then id.
pub fn rank_pool(pool: &MemoryPool, query: &str, reranker: &dyn Reranker) -> Result<Vec<(MemoryId, f64)>> {
    let candidates: Vec<Candidate<'_>> = pool
        .iter()
        .map(|m| Candidate {
            id: m.id,
            text: &m.text,
        })
        .collect();
    let ranked = reranker.rerank(query, &candidates)?;
    if ranked.len() != candidates.len() {
        return Err(BackendError::Protocol(format!(
            "reranker returned {} results for {} candidates",
            ranked.len(),
            candidates.len()
        ))
        .into());
    }
    let mut scores: HashMap<MemoryId, f64> = HashMap::with_capacity(ranked.len());
    for r in &ranked {
        if !(0.0..=1.0).contains(&r.score) || !pool.contains(r.id) || scores.insert(r.id, r.score).is_some() {
            return Err(BackendError::Protocol("reranker output is not a scored permutation".into()).into());
        }
    }
    let mut order: Vec<&MemoryItem> = pool.iter().collect();
    order.sort_by(|a, b| {
        scores[&b.id]
            .total_cmp(&scores[&a.id])
            .then_with(|| b.last_score.total_cmp(&a.last_score))
            .then_with(|| a.creation_round.cmp(&b.creation_round))
            .then_with(|| a.id.cmp(&b.id))
    });
    Ok(order.into_iter().map(|m| (m.id, scores[&m.id])).collect())
}

/// Splits the pool into the top `k` relevant, the next `k` noisy and the
/// remaining unactivated memories.
pub fn partition_retrieval(
    pool: &MemoryPool,
    query: &str,
    reranker: &dyn Reranker,
    k: usize,
) -> Result<RetrievalPartition> {
    if pool.is_empty() {
        return Err(EngineError::Invariant("retrieval over an empty pool".into()));
    }
    if query.trim().is_empty() {
        return Err(EngineError::Invariant("retrieval with an empty query".into()));
    }
    let ranked = rank_pool(pool, query, reranker)?;
    let mut ids = ranked.into_iter().map(|(id, _)| id);
    let relevant: Vec<MemoryId> = ids.by_ref().take(k).collect();
    let noisy: Vec<MemoryId> = ids.by_ref().take(k).collect();
    Ok(RetrievalPartition {
        relevant,
        noisy,
        unactivated: ids.collect(),
    })
}

/// Relevant memories record `current_round` and drop their suppression;
/// noisy memories are halved when `suppress` is set. Unactivated memories
/// are not touched.
pub fn apply_reinforcement_suppression(
    pool: &mut MemoryPool,
    partition: &RetrievalPartition,
    current_round: u64,
    suppress: bool,
    history_cap: usize,
) {
    for id in &partition.relevant {
        if let Some(item) = pool.get_mut(*id) {
            item.record_retrieval(current_round, history_cap);
            item.suppression_halvings = 0;
        }
    }
    if suppress {
        for id in &partition.noisy {
            if let Some(item) = pool.get_mut(*id) {
                item.suppress();
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvictionRecord {
    pub round: u64,
    pub evicted_id: MemoryId,
    pub effective_score: f64,
    pub policy: Policy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvictionOrder {
    /// Lowest effective score first, then oldest, then lowest id.
    LowestScore,
    /// Oldest creation round first, then lowest id.
    Oldest,
}

/// Evicts non-exempt memories until the pool fits `capacity` characters.
pub fn enforce_capacity(
    pool: &mut MemoryPool,
    capacity: Option<usize>,
    order: EvictionOrder,
    policy: Policy,
    is_exempt: &dyn Fn(&MemoryItem) -> bool,
) -> Result<Vec<EvictionRecord>> {
    let Some(capacity) = capacity else {
        return Ok(Vec::new());
    };
    let mut used = pool.total_chars();
    if used <= capacity {
        return Ok(Vec::new());
    }
    let mut victims: Vec<&MemoryItem> = pool.iter().filter(|m| !is_exempt(m)).collect();
    victims.sort_by(|a, b| {
        let by_score = match order {
            EvictionOrder::LowestScore => a.effective_score().total_cmp(&b.effective_score()),
            EvictionOrder::Oldest => Ordering::Equal,
        };
        by_score
            .then_with(|| a.creation_round.cmp(&b.creation_round))
            .then_with(|| a.id.cmp(&b.id))
    });
    let mut chosen = Vec::new();
    for item in victims {
        if used <= capacity {
            break;
        }
        used -= item.char_len();
        chosen.push((item.id, item.effective_score()));
    }
    if used > capacity {
        return Err(EngineError::CapacityOverflow { used, capacity });
    }
    let round = pool.current_round();
    Ok(chosen
        .into_iter()
        .map(|(id, effective_score)| {
            pool.remove(id);
            EvictionRecord {
                round,
                evicted_id: id,
                effective_score,
                policy,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Default)]
pub struct ForgettingOutcome {
    pub partition: Option<RetrievalPartition>,
    pub evicted: Vec<EvictionRecord>,
}

/// One forgetting step for the pool's current round under the configured
/// policy:
///
/// - `competition_inhibition`: score, partition, reinforce and suppress, evict by effective score;
/// - `no_inhibition`: the same without halving;
/// - `ebbinghaus`: retention decay with retrieval-grown strength, evict lowest retention;
/// - `fifo`: evict oldest first, no retrieval;
/// - `none`: scores only, nothing is retrieved or evicted.
pub fn forgetting_step(
    pool: &mut MemoryPool,
    query: &str,
    reranker: &dyn Reranker,
    config: &ForgettingConfig,
    is_exempt: &dyn Fn(&MemoryItem) -> bool,
) -> Result<ForgettingOutcome> {
    let now = pool.current_round();
    if config.policy != Policy::Ebbinghaus {
        for item in pool.iter_mut() {
            item.last_score = compute_score(item, now, config)?;
        }
    } else {
        refresh_scores(pool, now, config);
    }

    let retrieves = matches!(
        config.policy,
        Policy::CompetitionInhibition | Policy::NoInhibition | Policy::Ebbinghaus
    );
    let mut outcome = ForgettingOutcome::default();
    if retrieves && !pool.is_empty() && !query.trim().is_empty() {
        let partition = partition_retrieval(pool, query, reranker, config.k)?;
        let suppress = config.policy == Policy::CompetitionInhibition;
        apply_reinforcement_suppression(pool, &partition, now, suppress, config.retrieval_history_cap);
        outcome.partition = Some(partition);
        // The history cap may have dropped an old retrieval; keep the cached
        // score equal to what saved state reproduces.
        refresh_scores(pool, now, config);
    }

    let order = match config.policy {
        Policy::None => return Ok(outcome),
        Policy::Fifo => EvictionOrder::Oldest,
        _ => EvictionOrder::LowestScore,
    };
    outcome.evicted = enforce_capacity(pool, pool.capacity_chars, order, config.policy, is_exempt)?;
    Ok(outcome)
}
