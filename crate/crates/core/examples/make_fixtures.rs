//! Regenerates the files under `fixtures/` at the workspace root.
//!
//! cargo run -p memweave-core --example make_fixtures

use std::fs;
use std::path::PathBuf;

use memweave_core::config::EngineConfig;
use memweave_core::eval::{MemoryLabel, ProbeQuestion, ProbeTriplet};
use memweave_core::synthetic::fuzzed_transcript;
use memweave_core::types::Speaker;
use serde::Serialize;

fn jsonl<T: Serialize>(records: &[T]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
        .collect()
}

/// Latest user statement matching `prefix`, as (turn index, value).
fn last_stated(turns: &[memweave_core::types::DialogueTurn], prefix: &str) -> Option<(u64, String)> {
    turns
        .iter()
        .rev()
        .filter(|t| t.speaker == Speaker::User)
        .find_map(|t| t.text.strip_prefix(prefix).map(|v| (t.turn_index, v.to_string())))
}

fn main() {
    let dir = PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures"));
    fs::create_dir_all(&dir).expect("create fixtures dir");

    let transcript = fuzzed_transcript("fixture", 300, 42);
    fs::write(dir.join("transcript_600.jsonl"), jsonl(&transcript.turns)).expect("write transcript");

    let questions = [
        ("my favorite animal is ", "What is the user's favorite animal?", ["cats", "owls", "foxes", "otters", "horses", "geese"]),
        ("the food i dislike is ", "Which food does the user dislike?", ["noodles", "plums", "soup", "rice cakes", "figs", "dumplings"]),
        ("my name is ", "What is the user's name?", ["Lin", "Mara", "Teo", "Ines", "Wei", "Lan"]),
    ];
    let mut labels = Vec::new();
    let mut probes = Vec::new();
    for (i, (prefix, question, pool)) in questions.iter().enumerate() {
        let Some((turn, value)) = last_stated(&transcript.turns, prefix) else {
            continue;
        };
        labels.push(MemoryLabel {
            text: format!("{prefix}{value}"),
            turn,
        });
        let mut options: Vec<String> = pool.iter().filter(|o| **o != value).take(3).map(|o| o.to_string()).collect();
        let answer_index = i % 4;
        options.insert(answer_index, value);
        probes.push(ProbeQuestion {
            question: question.to_string(),
            options,
            answer_index,
            turn,
        });
    }
    fs::write(dir.join("labels.jsonl"), jsonl(&labels)).expect("write labels");
    fs::write(dir.join("probes.jsonl"), jsonl(&probes)).expect("write probes");

    let triplets = [
        ("My sister's birthday is on March 3.", "When is my sister's birthday?", "March 3"),
        ("I parked the car on level four.", "Where did I park the car?", "On level four."),
        ("My locker code is 2718.", "What is my locker code?", "2718"),
    ]
    .map(|(p, q, a)| ProbeTriplet {
        info_dialogue: p.into(),
        retrieval_dialogue: q.into(),
        reference_answer: a.into(),
    });
    fs::write(dir.join("triplets.jsonl"), jsonl(&triplets)).expect("write triplets");

    let config = toml::to_string(&EngineConfig::default()).expect("config serializes");
    fs::write(dir.join("memweave.toml"), config).expect("write config");
    println!("wrote fixtures to {}", dir.display());
}
