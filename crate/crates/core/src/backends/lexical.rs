use std::collections::BTreeSet;

use super::{BackendError, Candidate, Ranked, Reranker, SimilarityScorer};
use crate::text::content_tokens;

/// Dice coefficient over the sets of lowercased content tokens.
/// Two token-less strings count as identical.
pub fn dice(a: &str, b: &str) -> f64 {
    let a: BTreeSet<String> = content_tokens(a).into_iter().collect();
    let b: BTreeSet<String> = content_tokens(b).into_iter().collect();
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let shared = a.intersection(&b).count();
    2.0 * shared as f64 / (a.len() + b.len()) as f64
}

/// Offline stand-in for an embedding scorer and a cross-encoder reranker.
#[derive(Debug, Clone, Copy, Default)]
pub struct LexicalScorer;

impl SimilarityScorer for LexicalScorer {
    fn score(&self, a: &str, b: &str) -> Result<f64, BackendError> {
        Ok(dice(a, b))
    }

    fn identity(&self) -> String {
        "lexical-dice".to_string()
    }
}

impl Reranker for LexicalScorer {
    fn rerank(&self, query: &str, candidates: &[Candidate<'_>]) -> Result<Vec<Ranked>, BackendError> {
        let mut ranked: Vec<Ranked> = candidates
            .iter()
            .map(|c| Ranked {
                id: c.id,
                score: dice(query, c.text),
            })
            .collect();
        // stable: equal scores keep input order
        ranked.sort_by(|a, b| b.score.total_cmp(&a.score));
        Ok(ranked)
    }

    fn identity(&self) -> String {
        "lexical-dice".to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::MemoryId;

    #[test]
    fn dice_examples() {
        assert_eq!(dice("cats", "cats"), 1.0);
        assert_eq!(dice("cats", "dogs"), 0.0);
        assert!((dice("big red cat", "red cat") - 0.8).abs() < 1e-12);
    }

    #[test]
    fn rerank_is_stable_permutation() {
        let texts = ["red cat", "blue dog", "red dog", "green frog"];
        let cands: Vec<Candidate> = texts
            .iter()
            .enumerate()
            .map(|(i, t)| Candidate { id: MemoryId(i as u64), text: t })
            .collect();
        let out = LexicalScorer.rerank("red", &cands).unwrap();
        let ids: Vec<u64> = out.iter().map(|r| r.id.0).collect();
        // "red cat" and "red dog" tie and keep input order; so do the zeros
        assert_eq!(ids, vec![0, 2, 1, 3]);
        assert!(out.iter().all(|r| (0.0..=1.0).contains(&r.score)));
    }

    proptest::proptest! {
        #[test]
        fn dice_is_symmetric_and_bounded(a in "[a-c ]{0,12}", b in "[a-c ]{0,12}") {
            let ab = dice(&a, &b);
            proptest::prop_assert_eq!(ab, dice(&b, &a));
            proptest::prop_assert!((0.0..=1.0).contains(&ab));
        }
    }
}
