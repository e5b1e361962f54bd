//! Seeded synthetic dialogues for tests, fixtures and benchmarks.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::types::{Speaker, Transcript};

const SUBJECTS: &[&str] = &["the river", "my cousin", "the market", "a storm", "the old bridge", "our garden", "the train", "a letter"];
const VERBS: &[&str] = &["saw", "missed", "painted", "found", "fixed", "heard", "visited", "lost"];
const ANIMALS: &[&str] = &["cats", "owls", "foxes", "otters", "horses", "geese"];
const FOODS: &[&str] = &["noodles", "plums", "soup", "rice cakes", "figs", "dumplings"];
const NAMES: &[&str] = &["Lin", "Mara", "Teo", "Ines"];
const REPLIES: &[&str] = &["I see.", "Tell me more.", "How nice!", "Oh really?", "That sounds fun.", "Go on."];

fn user_line(rng: &mut ChaCha8Rng) -> String {
    let pick = |rng: &mut ChaCha8Rng, xs: &[&str]| xs.choose(rng).copied().unwrap_or_default().to_string();
    match rng.random_range(0..10) {
        0 => format!("my favorite animal is {}", pick(rng, ANIMALS)),
        1 => format!("the food i dislike is {}", pick(rng, FOODS)),
        2 => format!("i like {}", pick(rng, FOODS)),
        3 => format!("my name is {}", pick(rng, NAMES)),
        4 => format!("today i {} {}", pick(rng, VERBS), pick(rng, SUBJECTS)),
        _ => format!("{} {} {}", pick(rng, SUBJECTS), pick(rng, VERBS), rng.random_range(1..100)),
    }
}

/// `rounds` user/bot exchanges of 5 to 40 characters per turn.
pub fn fuzzed_transcript(session_id: &str, rounds: usize, seed: u64) -> Transcript {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut texts = Vec::with_capacity(2 * rounds);
    for _ in 0..rounds {
        texts.push(user_line(&mut rng));
        texts.push(REPLIES.choose(&mut rng).copied().unwrap_or("Ok.").to_string());
    }
    Transcript::alternating(session_id, Speaker::User, texts)
}

/// Replaces the user utterance of the given 1-based rounds.
pub fn plant(transcript: &mut Transcript, rounds: impl IntoIterator<Item = u64>, text: &str) {
    for r in rounds {
        let i = 2 * (r as usize - 1);
        if let Some(turn) = transcript.turns.get_mut(i) {
            turn.text = text.to_string();
        }
    }
}
