//! Deterministic generators. Each output is a pure function of the prompt.
//!
//! Behaviors that read structure out of the prompt rely on the `### SECTION`
//! markers and `ids:` line of the default templates.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::LazyLock;

use regex::Regex;

use super::lexical::dice;
use super::{truncate_chars, BackendError, TextGenerator};
use crate::prompts::section;
use crate::text::content_tokens;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MockBehavior {
    /// The prompt itself, truncated.
    Echo,
    /// `SUM[<ids>]` built from the prompt's `ids:` line.
    TemplateSum,
    /// A canned reply, returned verbatim.
    FixedJson(String),
    /// Rule-based persona extraction from the user lines of the dialogue.
    PatternPersona,
    /// Union of the EXISTING and NEW value lists, as a JSON array.
    UnionMerge,
    /// Letter of the option best covered by the MEMORIES section; `A` when
    /// nothing is covered.
    OverlapChoice,
    /// The MEMORIES section joined into one reply.
    RecallEcho,
    /// `round(5 * dice(REFERENCE, CANDIDATE))`.
    OverlapJudge,
    /// Always fails with a retriable error.
    Fail(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MockGenerator {
    behavior: MockBehavior,
}

impl MockGenerator {
    pub fn new(behavior: MockBehavior) -> Self {
        Self { behavior }
    }

    pub fn echo() -> Self {
        Self::new(MockBehavior::Echo)
    }

    pub fn template_sum() -> Self {
        Self::new(MockBehavior::TemplateSum)
    }

    pub fn fixed_json(canned: impl Into<String>) -> Self {
        Self::new(MockBehavior::FixedJson(canned.into()))
    }

    pub fn behavior(&self) -> &MockBehavior {
        &self.behavior
    }
}

impl TextGenerator for MockGenerator {
    fn generate(&self, prompt: &str, max_length: usize) -> Result<String, BackendError> {
        let out = match &self.behavior {
            MockBehavior::Echo => prompt.to_string(),
            MockBehavior::TemplateSum => template_sum(prompt),
            MockBehavior::FixedJson(s) => s.clone(),
            MockBehavior::PatternPersona => pattern_persona(prompt),
            MockBehavior::UnionMerge => union_merge(prompt),
            MockBehavior::OverlapChoice => overlap_choice(prompt),
            MockBehavior::RecallEcho => recall_echo(prompt),
            MockBehavior::OverlapJudge => overlap_judge(prompt),
            MockBehavior::Fail(msg) => return Err(BackendError::Unavailable(msg.clone())),
        };
        Ok(truncate_chars(&out, max_length))
    }

    fn identity(&self) -> String {
        let name = match &self.behavior {
            MockBehavior::Echo => "echo",
            MockBehavior::TemplateSum => "template-sum",
            MockBehavior::FixedJson(_) => "fixed-json",
            MockBehavior::PatternPersona => "pattern-persona",
            MockBehavior::UnionMerge => "union-merge",
            MockBehavior::OverlapChoice => "overlap-choice",
            MockBehavior::RecallEcho => "recall-echo",
            MockBehavior::OverlapJudge => "overlap-judge",
            MockBehavior::Fail(_) => "fail",
        };
        format!("mock:{name}")
    }
}

fn template_sum(prompt: &str) -> String {
    let ids = prompt
        .lines()
        .find_map(|l| l.trim().strip_prefix("ids:"))
        .map(|rest| {
            rest.split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .collect::<Vec<_>>()
                .join(",")
        })
        .unwrap_or_default();
    format!("SUM[{ids}]")
}

const VALUE: &str = r"([^.,;!?\n]+)";

static PERSONA_RULES: LazyLock<Vec<(&'static str, Regex)>> = LazyLock::new(|| {
    let rules: [(&str, String); 15] = [
        ("Name", format!(r"(?i)\bmy name is {VALUE}")),
        ("Age", r"(?i)\bi am (\d+) years old".to_string()),
        ("Gender", format!(r"(?i)\bmy gender is {VALUE}")),
        ("Profession", format!(r"(?i)\bi work as (?:an? )?{VALUE}")),
        ("Preferences", format!(r"(?i)\bi (?:like|love|enjoy) {VALUE}")),
        ("Skills", format!(r"(?i)\bi can {VALUE}")),
        ("Hobbies", format!(r"(?i)\bmy hobby is {VALUE}")),
        ("Background", format!(r"(?i)\bi (grew up {VALUE})")),
        ("RecentEvents", format!(r"(?i)\btoday i {VALUE}")),
        ("Plans", format!(r"(?i)\bi plan to {VALUE}")),
        ("FavoriteAnimals", format!(r"(?i)\bmy favou?rite animals? (?:is|are) {VALUE}")),
        ("DislikedAnimals", format!(r"(?i)\bthe animals? i dislike (?:is|are) {VALUE}")),
        ("FavoriteFoods", format!(r"(?i)\bmy favou?rite foods? (?:is|are) {VALUE}")),
        ("DislikedFoods", format!(r"(?i)\bthe foods? i dislike (?:is|are) {VALUE}")),
        ("Personality", format!(r"(?i)\bpeople say i am {VALUE}")),
    ];
    let mut compiled: Vec<(&'static str, Regex)> = rules
        .into_iter()
        .map(|(k, re)| (k, Regex::new(&re).expect("persona rule")))
        .collect();
    compiled.push((
        "Relationship",
        Regex::new(&format!(
            r"(?i)\b(my (?:best friend|partner|sister|brother|mother|father) is {VALUE})"
        ))
        .expect("persona rule"),
    ));
    compiled
});

fn pattern_persona(prompt: &str) -> String {
    let allowed: Option<BTreeSet<&str>> = section(prompt, "KEYS").map(|keys| {
        keys.lines()
            .map(|l| l.trim().trim_start_matches("- ").trim())
            .filter(|l| !l.is_empty())
            .collect()
    });
    let dialogue = section(prompt, "DIALOGUE").unwrap_or(prompt);
    let mut found: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    for line in dialogue.lines() {
        let Some(text) = line.trim().strip_prefix("user:") else {
            continue;
        };
        for (key, re) in PERSONA_RULES.iter() {
            if allowed.as_ref().is_some_and(|a| !a.contains(key)) {
                continue;
            }
            for cap in re.captures_iter(text) {
                let value = cap[1].trim().to_string();
                if value.is_empty() {
                    continue;
                }
                let values = found.entry(key).or_default();
                if !values.contains(&value) {
                    values.push(value);
                }
            }
        }
    }
    serde_json::to_string(&found).expect("string map serializes")
}

fn json_list(section_text: Option<&str>) -> Vec<String> {
    section_text
        .and_then(|s| serde_json::from_str::<Vec<String>>(s.trim()).ok())
        .unwrap_or_default()
}

fn union_merge(prompt: &str) -> String {
    let mut out = json_list(section(prompt, "EXISTING"));
    for v in json_list(section(prompt, "NEW")) {
        if !out.contains(&v) {
            out.push(v);
        }
    }
    serde_json::to_string(&out).expect("string list serializes")
}

fn bullet_lines(section_text: Option<&str>) -> Vec<&str> {
    section_text
        .map(|s| {
            s.lines()
                .map(|l| l.trim().trim_start_matches("- ").trim())
                .filter(|l| !l.is_empty())
                .collect()
        })
        .unwrap_or_default()
}

fn overlap_choice(prompt: &str) -> String {
    let memory_tokens: BTreeSet<String> = bullet_lines(section(prompt, "MEMORIES"))
        .into_iter()
        .flat_map(content_tokens)
        .collect();
    let mut best: Option<(char, f64)> = None;
    for line in section(prompt, "OPTIONS").unwrap_or("").lines() {
        let line = line.trim();
        let mut chars = line.chars();
        let (Some(letter), Some('.')) = (chars.next(), chars.next()) else {
            continue;
        };
        let tokens = content_tokens(chars.as_str());
        if tokens.is_empty() {
            continue;
        }
        let covered = tokens.iter().filter(|t| memory_tokens.contains(*t)).count();
        let coverage = covered as f64 / tokens.len() as f64;
        if coverage > 0.0 && best.is_none_or(|(_, c)| coverage > c) {
            best = Some((letter, coverage));
        }
    }
    best.map(|(l, _)| l).unwrap_or('A').to_string()
}

fn recall_echo(prompt: &str) -> String {
    let lines = bullet_lines(section(prompt, "MEMORIES"));
    if lines.is_empty() {
        "I do not remember.".to_string()
    } else {
        lines.join(" ")
    }
}

fn overlap_judge(prompt: &str) -> String {
    let reference = section(prompt, "REFERENCE").unwrap_or("");
    let candidate = section(prompt, "CANDIDATE").unwrap_or("");
    if content_tokens(reference).is_empty() || content_tokens(candidate).is_empty() {
        return "0".to_string();
    }
    ((5.0 * dice(reference, candidate)).round() as u8).to_string()
}
