//! ROUGE-2 and ROUGE-L precision over [`tokenize`](crate::text::tokenize)
//! tokens.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::backends::{BackendError, SimilarityScorer};
use crate::text::tokenize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RougeVariant {
    Rouge2,
    RougeL,
}

pub fn rouge_precision(candidate: &str, reference: &str, variant: RougeVariant) -> f64 {
    let c = tokenize(candidate);
    let r = tokenize(reference);
    match variant {
        RougeVariant::Rouge2 => rouge2_tokens(&c, &r),
        RougeVariant::RougeL => rougel_tokens(&c, &r),
    }
}

/// Clipped bigram matches over candidate bigrams; 0 without candidate bigrams.
pub fn rouge2_tokens<T: AsRef<str>>(candidate: &[T], reference: &[T]) -> f64 {
    if candidate.len() < 2 {
        return 0.0;
    }
    let mut available: HashMap<(&str, &str), usize> = HashMap::new();
    for w in reference.windows(2) {
        *available.entry((w[0].as_ref(), w[1].as_ref())).or_insert(0) += 1;
    }
    let mut matched = 0usize;
    for w in candidate.windows(2) {
        if let Some(n) = available.get_mut(&(w[0].as_ref(), w[1].as_ref())) {
            if *n > 0 {
                *n -= 1;
                matched += 1;
            }
        }
    }
    matched as f64 / (candidate.len() - 1) as f64
}

/// LCS length over candidate length; 0 for an empty candidate.
pub fn rougel_tokens<T: AsRef<str>>(candidate: &[T], reference: &[T]) -> f64 {
    if candidate.is_empty() {
        return 0.0;
    }
    lcs_len(candidate, reference) as f64 / candidate.len() as f64
}

/// Longest common subsequence length, bit-parallel over `a`.
pub fn lcs_len<T: AsRef<str>>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let words = a.len().div_ceil(64);
    let mut masks: HashMap<&str, Vec<u64>> = HashMap::new();
    for (i, tok) in a.iter().enumerate() {
        masks.entry(tok.as_ref()).or_insert_with(|| vec![0; words])[i / 64] |= 1 << (i % 64);
    }
    // Zero bits of v mark matched positions of a.
    let mut v = vec![u64::MAX; words];
    for tok in b {
        let Some(pm) = masks.get(tok.as_ref()) else {
            continue;
        };
        let mut carry = 0u64;
        for w in 0..words {
            let u = v[w] & pm[w];
            let (s1, c1) = v[w].overflowing_add(u);
            let (s2, c2) = s1.overflowing_add(carry);
            carry = (c1 || c2) as u64;
            v[w] = s2 | (v[w] & !u);
        }
    }
    let mut zeros = 0;
    for (w, word) in v.iter().enumerate() {
        let bits = (a.len() - w * 64).min(64);
        let mask = if bits == 64 { u64::MAX } else { (1u64 << bits) - 1 };
        zeros += (!word & mask).count_ones() as usize;
    }
    zeros
}

/// ROUGE precision as a similarity: `score(label, memory)` treats the memory
/// as the candidate and the label as the reference.
#[derive(Debug, Clone, Copy)]
pub struct RougeScorer(pub RougeVariant);

impl SimilarityScorer for RougeScorer {
    fn score(&self, reference: &str, candidate: &str) -> Result<f64, BackendError> {
        Ok(rouge_precision(candidate, reference, self.0))
    }

    fn identity(&self) -> String {
        match self.0 {
            RougeVariant::Rouge2 => "rouge2-precision".into(),
            RougeVariant::RougeL => "rougel-precision".into(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dp_lcs(a: &[String], b: &[String]) -> usize {
        let mut t = vec![vec![0usize; b.len() + 1]; a.len() + 1];
        for i in 1..=a.len() {
            for j in 1..=b.len() {
                t[i][j] = if a[i - 1] == b[j - 1] {
                    t[i - 1][j - 1] + 1
                } else {
                    t[i - 1][j].max(t[i][j - 1])
                };
            }
        }
        t[a.len()][b.len()]
    }

    fn brute_rouge2(c: &[String], r: &[String]) -> f64 {
        if c.len() < 2 {
            return 0.0;
        }
        let mut pool: Vec<(String, String)> = r.windows(2).map(|w| (w[0].clone(), w[1].clone())).collect();
        let mut hits = 0;
        for w in c.windows(2) {
            if let Some(p) = pool.iter().position(|b| b.0 == w[0] && b.1 == w[1]) {
                pool.remove(p);
                hits += 1;
            }
        }
        hits as f64 / (c.len() - 1) as f64
    }

    #[test]
    fn examples() {
        assert_eq!(rouge_precision("a b c", "a b c", RougeVariant::Rouge2), 1.0);
        assert_eq!(rouge_precision("a b c", "a b c", RougeVariant::RougeL), 1.0);
        assert_eq!(rouge_precision("a b", "c d", RougeVariant::Rouge2), 0.0);
        assert_eq!(rouge_precision("a b", "c d", RougeVariant::RougeL), 0.0);
        assert_eq!(rouge_precision("a b c", "a c", RougeVariant::RougeL), 2.0 / 3.0);
        assert_eq!(rouge_precision("", "a", RougeVariant::RougeL), 0.0);
        assert_eq!(rouge_precision("a", "a", RougeVariant::Rouge2), 0.0);
    }

    #[test]
    fn cjk_counts_characters() {
        // 我喜欢猫 vs 我喜欢狗: LCS 3 of 4, bigrams 我喜 喜欢 match of 3
        assert_eq!(rouge_precision("我喜欢猫", "我喜欢狗", RougeVariant::RougeL), 0.75);
        assert_eq!(rouge_precision("我喜欢猫", "我喜欢狗", RougeVariant::Rouge2), 2.0 / 3.0);
    }

    #[test]
    fn clipped_bigrams() {
        // candidate repeats "a a" three times; the reference holds it once
        assert_eq!(rouge_precision("a a a a", "a a", RougeVariant::Rouge2), 1.0 / 3.0);
    }

    #[test]
    fn lcs_crosses_word_boundaries() {
        let a: Vec<String> = (0..150).map(|i| format!("t{}", i % 7)).collect();
        let b: Vec<String> = (0..130).map(|i| format!("t{}", (i * 3) % 7)).collect();
        assert_eq!(lcs_len(&a, &b), dp_lcs(&a, &b));
    }

    fn tokens(max: usize) -> impl Strategy<Value = Vec<String>> {
        proptest::collection::vec(0u8..5, 0..=max)
            .prop_map(|v| v.into_iter().map(|x| ((b'a' + x) as char).to_string()).collect())
    }

    proptest! {
        #[test]
        fn agrees_with_oracles(c in tokens(30), r in tokens(30)) {
            prop_assert_eq!(lcs_len(&c, &r), dp_lcs(&c, &r));
            prop_assert_eq!(rouge2_tokens(&c, &r), brute_rouge2(&c, &r));
            let p = rougel_tokens(&c, &r);
            prop_assert!((0.0..=1.0).contains(&p));
        }
    }
}
