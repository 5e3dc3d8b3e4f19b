//! Seeded synthetic text for benchmarks and fixtures.
//!
//! Documents mix a small pool of shared function words with one topic's
//! content lexicon, re-using recently emitted content words far more often
//! than fresh ones. That gives the corpus the two properties the vocabulary
//! policies are sensitive to: locally bursty token reuse (a recency window
//! covers well) and per-document novelty (a frozen prompt-derived set decays
//! as decoding drifts past the prompt).

use std::collections::{HashSet, VecDeque};
use std::fmt::Write as _;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const CONSONANTS: [&str; 14] = [
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z",
];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];

/// Shape of a generated corpus.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SynthConfig {
    pub docs: usize,
    pub words_per_doc: usize,
    pub topics: usize,
    /// Content lexicon size per topic.
    pub topic_words: usize,
    /// Shared function-word pool size.
    pub function_words: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            docs: 240,
            words_per_doc: 240,
            topics: 16,
            topic_words: 150,
            function_words: 20,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("docs", self.docs),
            ("words_per_doc", self.words_per_doc),
            ("topics", self.topics),
            ("topic_words", self.topic_words),
            ("function_words", self.function_words),
        ] {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be >= 1")));
            }
        }
        Ok(())
    }

    pub fn total_words(&self) -> usize {
        self.docs * self.words_per_doc
    }
}

fn syllable(rng: &mut ChaCha8Rng) -> String {
    let mut s = String::new();
    s.push_str(CONSONANTS[rng.gen_range(0..CONSONANTS.len())]);
    s.push_str(VOWELS[rng.gen_range(0..VOWELS.len())]);
    s
}

/// A word nobody has been handed before.
fn fresh_word(rng: &mut ChaCha8Rng, syllables: usize, seen: &mut HashSet<String>) -> String {
    loop {
        let mut w = String::new();
        for _ in 0..syllables {
            let _ = write!(w, "{}", syllable(rng));
        }
        if seen.insert(w.clone()) {
            return w;
        }
    }
}

/// Generate the corpus as newline-separated documents. Fully determined by
/// the config, including its seed.
pub fn generate(cfg: &SynthConfig) -> Result<String> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut seen = HashSet::new();

    let function: Vec<String> = (0..cfg.function_words)
        .map(|_| fresh_word(&mut rng, 1, &mut seen))
        .collect();
    let topics: Vec<Vec<String>> = (0..cfg.topics)
        .map(|_| {
            (0..cfg.topic_words)
                .map(|_| {
                    let syllables = 2 + rng.gen_range(0..2);
                    fresh_word(&mut rng, syllables, &mut seen)
                })
                .collect()
        })
        .collect();

    let mut out = String::new();
    for _ in 0..cfg.docs {
        let topic = &topics[rng.gen_range(0..cfg.topics)];
        let mut recent: VecDeque<usize> = VecDeque::new();
        for i in 0..cfg.words_per_doc {
            if i > 0 {
                out.push(' ');
            }
            if rng.gen::<f64>() < 0.30 {
                out.push_str(&function[rng.gen_range(0..cfg.function_words)]);
                continue;
            }
            let idx = if !recent.is_empty() && rng.gen::<f64>() < 0.55 {
                recent[rng.gen_range(0..recent.len())]
            } else {
                // Min of two uniforms: skews toward the lexicon front so a
                // topic has frequent heads and a long tail.
                rng.gen_range(0..cfg.topic_words)
                    .min(rng.gen_range(0..cfg.topic_words))
            };
            recent.push_back(idx);
            if recent.len() > 20 {
                recent.pop_front();
            }
            out.push_str(&topic[idx]);
        }
        out.push('\n');
    }
    Ok(out)
}
