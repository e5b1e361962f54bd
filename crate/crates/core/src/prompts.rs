//! Prompt templates. Templates are plain text with `{name}` placeholders
//! and `### SECTION` markers; the defaults ship in `prompts/`.

use std::path::Path;

use serde::{Deserialize, Serialize};

/// Templates used by the engine itself. They are part of the config hash.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSet {
    pub summarize_level2: String,
    pub summarize_level3: String,
    pub persona_snapshot: String,
    pub persona_merge: String,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self {
            summarize_level2: include_str!("../prompts/summarize_level2.txt").to_string(),
            summarize_level3: include_str!("../prompts/summarize_level3.txt").to_string(),
            persona_snapshot: include_str!("../prompts/persona_snapshot.txt").to_string(),
            persona_merge: include_str!("../prompts/persona_merge.txt").to_string(),
        }
    }
}

impl PromptSet {
    /// Loads templates from a directory, falling back to the default for
    /// any file that is missing.
    pub fn from_dir(dir: &Path) -> std::io::Result<Self> {
        let mut set = Self::default();
        for (file, slot) in [
            ("summarize_level2.txt", &mut set.summarize_level2),
            ("summarize_level3.txt", &mut set.summarize_level3),
            ("persona_snapshot.txt", &mut set.persona_snapshot),
            ("persona_merge.txt", &mut set.persona_merge),
        ] {
            let path = dir.join(file);
            if path.exists() {
                *slot = std::fs::read_to_string(path)?;
            }
        }
        Ok(set)
    }

    /// Summarization template for building a unit at `level` (2 or 3).
    pub fn summarize(&self, level: u8) -> &str {
        if level <= 2 {
            &self.summarize_level2
        } else {
            &self.summarize_level3
        }
    }
}

/// Templates used by the evaluation harness.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalPrompts {
    pub probe_answer: String,
    pub table_answer: String,
    pub judge_memory: String,
    pub judge_response: String,
}

impl Default for EvalPrompts {
    fn default() -> Self {
        Self {
            probe_answer: include_str!("../prompts/probe_answer.txt").to_string(),
            table_answer: include_str!("../prompts/table_answer.txt").to_string(),
            judge_memory: include_str!("../prompts/judge_memory.txt").to_string(),
            judge_response: include_str!("../prompts/judge_response.txt").to_string(),
        }
    }
}

/// Substitutes `{name}` placeholders in one pass. Substituted values are
/// not scanned again; unknown placeholders are left as they are.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let replaced = after.find('}').and_then(|close| {
            let name = &after[..close];
            vars.iter()
                .find(|(k, _)| *k == name)
                .map(|(_, v)| (close, *v))
        });
        match replaced {
            Some((close, value)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

/// Body of a `### NAME` section, up to the next `### ` marker line.
pub fn section<'a>(prompt: &'a str, name: &str) -> Option<&'a str> {
    let marker = format!("### {name}");
    let mut start = None;
    let mut offset = 0;
    for line in prompt.split_inclusive('\n') {
        let trimmed = line.trim_end();
        if let Some(s) = start {
            if trimmed.starts_with("### ") {
                return Some(prompt[s..offset].trim_end_matches('\n'));
            }
        } else if trimmed == marker {
            start = Some(offset + line.len());
        }
        offset += line.len();
    }
    start.map(|s| prompt[s..].trim_end_matches('\n'))
}
