//! Merge strategies, one per key category.
//!
//! Rule-based merges (replace, append, trajectory) never fail. The
//! embedding-based and model-based merges compute their result first and
//! only then touch the sketch, so a failure leaves it unchanged.

use serde_json::Value;

use super::{PersonaSketch, PersonaValue};
use crate::backends::{CallBudget, CallKind, SimilarityScorer, TextGenerator};
use crate::error::{ParseError, Result};
use crate::prompts::{render, PromptSet};

/// Keeps only the last new value. Empty input is a no-op.
pub fn merge_replace(sketch: &mut PersonaSketch, key: &str, new_values: &[String]) {
    if let Some(last) = new_values.last() {
        sketch.entries.insert(key.to_string(), vec![PersonaValue::new(last.clone(), 0)]);
    }
}

/// Appends values in order, skipping exact duplicates.
pub fn merge_append(sketch: &mut PersonaSketch, key: &str, new_values: &[String]) {
    if new_values.is_empty() {
        return;
    }
    let values = sketch.entries.entry(key.to_string()).or_default();
    for v in new_values {
        if !values.iter().any(|pv| &pv.value == v) {
            values.push(PersonaValue::new(v.clone(), 0));
        }
    }
}

/// One merge event: every existing stamp ages by one and the new values
/// arrive with stamp 0. A value seen again is re-added as the newest, with
/// a fresh stamp. Empty input is not a merge event.
pub fn merge_trajectory(sketch: &mut PersonaSketch, key: &str, new_values: &[String]) {
    if new_values.is_empty() {
        return;
    }
    let values = sketch.entries.entry(key.to_string()).or_default();
    values.retain(|pv| !new_values.contains(&pv.value));
    for pv in values.iter_mut() {
        pv.stamp += 1;
    }
    for v in new_values {
        if !values.iter().any(|pv| &pv.value == v) {
            values.push(PersonaValue::new(v.clone(), 0));
        }
    }
}

/// Appends the new values to `key` and deletes every value of `partner`
/// whose similarity to some new value reaches `threshold`.
pub fn merge_contradictory(
    sketch: &mut PersonaSketch,
    key: &str,
    partner: &str,
    new_values: &[String],
    scorer: &dyn SimilarityScorer,
    threshold: f64,
) -> Result<()> {
    if new_values.is_empty() {
        return Ok(());
    }
    let partner_values = sketch.values(partner);
    let mut doomed = Vec::new();
    for old in &partner_values {
        for new in new_values {
            if scorer.score(old, new)? >= threshold {
                doomed.push(old.clone());
                break;
            }
        }
    }
    if let Some(values) = sketch.entries.get_mut(partner) {
        values.retain(|pv| !doomed.contains(&pv.value));
    }
    merge_append(sketch, key, new_values);
    Ok(())
}

/// Asks the backend to consolidate old and new values; its list replaces
/// the key's values verbatim.
pub fn merge_complex(
    sketch: &mut PersonaSketch,
    key: &str,
    new_values: &[String],
    backend: &dyn TextGenerator,
    prompts: &PromptSet,
    max_length: usize,
    budget: &mut CallBudget,
) -> Result<()> {
    if new_values.is_empty() {
        return Ok(());
    }
    let existing = serde_json::to_string(&sketch.values(key)).expect("string list");
    let new = serde_json::to_string(new_values).expect("string list");
    let prompt = render(
        &prompts.persona_merge,
        &[("key", key), ("existing", &existing), ("new", &new)],
    );
    budget.charge(CallKind::Merge)?;
    let raw = backend.generate(&prompt, max_length)?;
    let merged = parse_value_list(&raw)?;
    sketch.entries.insert(
        key.to_string(),
        merged.into_iter().map(|v| PersonaValue::new(v, 0)).collect(),
    );
    Ok(())
}

/// Parses the first JSON array of strings in `raw`. Blank entries and
/// duplicates are dropped.
pub fn parse_value_list(raw: &str) -> Result<Vec<String>, ParseError> {
    let err = |reason: &str| ParseError {
        what: "value list",
        reason: reason.to_string(),
        raw: raw.to_string(),
    };
    let start = raw.find('[').ok_or_else(|| err("no JSON array"))?;
    let end = raw.rfind(']').ok_or_else(|| err("no JSON array"))?;
    if end < start {
        return Err(err("no JSON array"));
    }
    let value: Value = serde_json::from_str(&raw[start..=end]).map_err(|e| err(&e.to_string()))?;
    let Value::Array(items) = value else {
        return Err(err("not an array"));
    };
    let mut out: Vec<String> = Vec::new();
    for item in items {
        let s = match item {
            Value::String(s) => s,
            Value::Number(n) => n.to_string(),
            Value::Bool(b) => b.to_string(),
            _ => return Err(err("array holds a non-scalar entry")),
        };
        let s = s.trim().to_string();
        if !s.is_empty() && !out.contains(&s) {
            out.push(s);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{BackendError, LexicalScorer, MockBehavior, MockGenerator};
    use crate::error::EngineError;

    fn v(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    fn sketch(entries: &[(&str, &[&str])]) -> PersonaSketch {
        let mut s = PersonaSketch::default();
        for (k, vals) in entries {
            s.entries.insert(
                k.to_string(),
                vals.iter().map(|x| PersonaValue::new(x.to_string(), 0)).collect(),
            );
        }
        s
    }

    #[test]
    fn replace_examples() {
        let mut s = sketch(&[("Name", &["Alice"])]);
        merge_replace(&mut s, "Name", &v(&["Bob"]));
        assert_eq!(s.values("Name"), v(&["Bob"]));
        merge_replace(&mut s, "Name", &[]);
        assert_eq!(s.values("Name"), v(&["Bob"]));
        let mut s = sketch(&[("Age", &[])]);
        merge_replace(&mut s, "Age", &v(&["25"]));
        assert_eq!(s.values("Age"), v(&["25"]));
    }

    #[test]
    fn append_examples() {
        let mut s = sketch(&[("Preferences", &["tea"])]);
        merge_append(&mut s, "Preferences", &v(&["coffee"]));
        assert_eq!(s.values("Preferences"), v(&["tea", "coffee"]));
        let mut s = sketch(&[("Skills", &["chess"])]);
        merge_append(&mut s, "Skills", &v(&["chess"]));
        assert_eq!(s.values("Skills"), v(&["chess"]));
        let mut s = sketch(&[("Hobbies", &[])]);
        merge_append(&mut s, "Hobbies", &v(&["hiking", "hiking"]));
        assert_eq!(s.values("Hobbies"), v(&["hiking"]));
    }

    #[test]
    fn trajectory_examples() {
        let mut s = PersonaSketch::default();
        s.entries.insert("RecentEvents".into(), vec![PersonaValue::new("moved".into(), 0)]);
        merge_trajectory(&mut s, "RecentEvents", &v(&["got a dog"]));
        assert_eq!(
            s.entries["RecentEvents"],
            vec![PersonaValue::new("moved".into(), 1), PersonaValue::new("got a dog".into(), 0)]
        );

        let mut s = PersonaSketch::default();
        merge_trajectory(&mut s, "Plans", &v(&["a"]));
        merge_trajectory(&mut s, "Plans", &v(&["b"]));
        merge_trajectory(&mut s, "Plans", &v(&["c"]));
        let stamps: Vec<u64> = s.entries["Plans"].iter().map(|p| p.stamp).collect();
        assert_eq!(stamps, vec![2, 1, 0]);

        let before = s.clone();
        merge_trajectory(&mut s, "Plans", &[]);
        assert_eq!(s, before);
    }

    #[test]
    fn trajectory_refreshes_repeated_value() {
        let mut s = PersonaSketch::default();
        merge_trajectory(&mut s, "Plans", &v(&["a"]));
        merge_trajectory(&mut s, "Plans", &v(&["b"]));
        merge_trajectory(&mut s, "Plans", &v(&["a"]));
        assert_eq!(
            s.entries["Plans"],
            vec![PersonaValue::new("b".into(), 1), PersonaValue::new("a".into(), 0)]
        );
    }

    #[test]
    fn contradictory_examples() {
        let mut s = sketch(&[("FavoriteAnimals", &["cats"]), ("DislikedAnimals", &[])]);
        merge_contradictory(&mut s, "DislikedAnimals", "FavoriteAnimals", &v(&["cats"]), &LexicalScorer, 0.8).unwrap();
        assert_eq!(s.values("FavoriteAnimals"), Vec::<String>::new());
        assert_eq!(s.values("DislikedAnimals"), v(&["cats"]));

        let mut s = sketch(&[("FavoriteAnimals", &["cats"]), ("DislikedAnimals", &[])]);
        merge_contradictory(&mut s, "DislikedAnimals", "FavoriteAnimals", &v(&["spiders"]), &LexicalScorer, 0.8).unwrap();
        assert_eq!(s.values("FavoriteAnimals"), v(&["cats"]));
        assert_eq!(s.values("DislikedAnimals"), v(&["spiders"]));

        let mut s = sketch(&[("DislikedAnimals", &["spiders"])]);
        merge_contradictory(&mut s, "DislikedAnimals", "FavoriteAnimals", &v(&["spiders"]), &LexicalScorer, 0.8).unwrap();
        assert_eq!(s.values("DislikedAnimals"), v(&["spiders"]));
    }

    struct BrokenScorer;
    impl SimilarityScorer for BrokenScorer {
        fn score(&self, _: &str, _: &str) -> Result<f64, BackendError> {
            Err(BackendError::Unavailable("scorer down".into()))
        }
        fn identity(&self) -> String {
            "broken".into()
        }
    }

    #[test]
    fn contradictory_scorer_failure_leaves_sketch() {
        let mut s = sketch(&[("FavoriteAnimals", &["cats"])]);
        let before = s.clone();
        let err = merge_contradictory(&mut s, "DislikedAnimals", "FavoriteAnimals", &v(&["cats"]), &BrokenScorer, 0.8)
            .unwrap_err();
        assert!(err.is_retriable());
        assert_eq!(s, before);
    }

    fn complex(s: &mut PersonaSketch, gen: &MockGenerator, new: &[&str]) -> Result<()> {
        let mut budget = CallBudget::new(4);
        merge_complex(s, "Personality", &v(new), gen, &PromptSet::default(), 512, &mut budget)
    }

    #[test]
    fn complex_examples() {
        let mut s = sketch(&[("Personality", &["calm"])]);
        complex(&mut s, &MockGenerator::new(MockBehavior::UnionMerge), &["curious"]).unwrap();
        assert_eq!(s.values("Personality"), v(&["calm", "curious"]));

        let mut s = sketch(&[("Personality", &["likes dogs"])]);
        complex(&mut s, &MockGenerator::fixed_json(r#"["adores dogs"]"#), &["adores dogs"]).unwrap();
        assert_eq!(s.values("Personality"), v(&["adores dogs"]));

        let mut s = sketch(&[("Personality", &["calm"])]);
        let before = s.clone();
        let e = complex(&mut s, &MockGenerator::new(MockBehavior::Fail("x".into())), &["loud"]).unwrap_err();
        assert!(matches!(e, EngineError::Backend(_)));
        assert_eq!(s, before);
        let e = complex(&mut s, &MockGenerator::fixed_json("no list here"), &["loud"]).unwrap_err();
        assert!(matches!(e, EngineError::Parse(_)));
        assert_eq!(s, before);
    }

    #[test]
    fn value_list_parsing() {
        assert_eq!(parse_value_list("x [\"a\", 3, \" a \"] y").unwrap(), v(&["a", "3"]));
        assert!(parse_value_list("{}").is_err());
        assert!(parse_value_list("[[1]]").is_err());
    }

    proptest::proptest! {
        #[test]
        fn replace_is_idempotent(vals in proptest::collection::vec("[a-c]{1,3}", 0..4)) {
            let mut a = sketch(&[("Name", &["z"])]);
            merge_replace(&mut a, "Name", &vals);
            let once = a.clone();
            merge_replace(&mut a, "Name", &vals);
            proptest::prop_assert_eq!(a.clone(), once);
            proptest::prop_assert!(a.values("Name").len() <= 1);
        }

        #[test]
        fn append_is_idempotent(vals in proptest::collection::vec("[a-c]{1,2}", 0..6)) {
            let mut a = PersonaSketch::default();
            merge_append(&mut a, "Skills", &vals);
            let once = a.clone();
            merge_append(&mut a, "Skills", &vals);
            proptest::prop_assert_eq!(a, once);
        }

        #[test]
        fn trajectory_stamps_count_events(events in proptest::collection::vec("[a-z]{4}", 1..12)) {
            // one fresh value per event
            let mut s = PersonaSketch::default();
            let distinct: Vec<String> = events.iter().enumerate().map(|(i, e)| format!("{e}{i}")).collect();
            for e in &distinct {
                merge_trajectory(&mut s, "Plans", std::slice::from_ref(e));
            }
            let n = distinct.len() as u64;
            for (i, pv) in s.entries["Plans"].iter().enumerate() {
                proptest::prop_assert_eq!(pv.stamp, n - 1 - i as u64);
            }
        }
    }
}
