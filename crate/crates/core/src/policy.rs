//! Draft-vocabulary policies: how each round's active set is formed.
//!
//! Five modes. `full` scores the whole vocabulary. `static` fixes the
//! corpus-frequency top-k. The three windowed modes share the candidate
//! stream machinery: `dynamic` seeds from the prompt and keeps growing,
//! `ctx-only` freezes the prompt-seeded window, and `ext-only` starts empty
//! and relies purely on per-round updates.

use serde::{Deserialize, Serialize};

use crate::corpus::{FrequencyTable, TokenId};
use crate::error::{Error, Result};
use crate::stream::{ActiveVocabulary, CandidateStream, UpdateBatch};

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize, Hash)]
pub enum PolicyMode {
    #[serde(rename = "full")]
    Full,
    #[serde(rename = "static")]
    StaticTopK,
    #[serde(rename = "dynamic")]
    Dynamic,
    #[serde(rename = "ctx-only")]
    CtxOnly,
    #[serde(rename = "ext-only")]
    ExtOnly,
}

impl PolicyMode {
    pub const ALL: [PolicyMode; 5] = [
        PolicyMode::Full,
        PolicyMode::StaticTopK,
        PolicyMode::Dynamic,
        PolicyMode::CtxOnly,
        PolicyMode::ExtOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyMode::Full => "full",
            PolicyMode::StaticTopK => "static",
            PolicyMode::Dynamic => "dynamic",
            PolicyMode::CtxOnly => "ctx-only",
            PolicyMode::ExtOnly => "ext-only",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(PolicyMode::Full),
            "static" => Ok(PolicyMode::StaticTopK),
            "dynamic" => Ok(PolicyMode::Dynamic),
            "ctx-only" => Ok(PolicyMode::CtxOnly),
            "ext-only" => Ok(PolicyMode::ExtOnly),
            other => Err(Error::InvalidConfig(format!(
                "unknown policy mode {other:?}, expected full|static|dynamic|ctx-only|ext-only"
            ))),
        }
    }

    /// Modes whose active set can change between rounds.
    pub fn is_windowed(self) -> bool {
        matches!(self, PolicyMode::Dynamic | PolicyMode::ExtOnly)
    }
}

impl std::fmt::Display for PolicyMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub mode: PolicyMode,
    /// Set size for the static policy.
    pub k_static: usize,
    /// Per-position candidates taken from the prompt prefill.
    pub k_pre: usize,
    /// Verifier top-k appended each round.
    pub k_ver: usize,
    /// Recency window: hard cap on the active-set size.
    pub window: usize,
    /// Tokens force-included in every non-empty windowed active set
    /// (UNK, and EOS when the model defines one), so sequence termination
    /// stays draftable even when recency would evict it.
    pub specials: Vec<TokenId>,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            mode: PolicyMode::Dynamic,
            k_static: 256,
            k_pre: 3,
            k_ver: 3,
            window: 3072,
            specials: vec![TokenId::UNK],
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        match self.mode {
            PolicyMode::StaticTopK => {
                if self.k_static == 0 || self.k_static > vocab_size {
                    return Err(Error::InvalidConfig(format!(
                        "k_static {} outside 1..={vocab_size}",
                        self.k_static
                    )));
                }
            }
            PolicyMode::Dynamic | PolicyMode::CtxOnly | PolicyMode::ExtOnly => {
                if self.window == 0 {
                    return Err(Error::InvalidConfig("window must be >= 1".into()));
                }
            }
            PolicyMode::Full => {}
        }
        if self.specials.iter().any(|t| t.index() >= vocab_size) {
            return Err(Error::InvalidConfig(
                "special token id outside the vocabulary".into(),
            ));
        }
        Ok(())
    }
}

enum StateKind {
    /// Active set fixed for the whole decode (full, static, ctx-only).
    Fixed(ActiveVocabulary),
    /// Active set tracks the candidate stream (dynamic, ext-only).
    Windowed(CandidateStream),
}

/// Per-decode policy state; produces the active vocabulary for each round.
pub struct PolicyState {
    cfg: PolicyConfig,
    kind: StateKind,
}

impl PolicyState {
    /// Build the initial state. `prefill_scores` (one full-vocabulary score
    /// vector per prompt position) is required by the prompt-seeded modes;
    /// `freq` is required by the static mode.
    pub fn init(
        cfg: &PolicyConfig,
        vocab_size: usize,
        prompt: &[TokenId],
        prefill_scores: Option<&[Vec<f64>]>,
        freq: Option<&FrequencyTable>,
    ) -> Result<Self> {
        cfg.validate(vocab_size)?;
        if prompt.is_empty() {
            return Err(Error::EmptyPrompt);
        }
        let kind = match cfg.mode {
            PolicyMode::Full => StateKind::Fixed(ActiveVocabulary::full(vocab_size)),
            PolicyMode::StaticTopK => {
                let freq = freq.ok_or(Error::MissingFrequencyTable)?;
                StateKind::Fixed(ActiveVocabulary::new(freq.top_k(cfg.k_static).to_vec()))
            }
            PolicyMode::Dynamic | PolicyMode::CtxOnly => {
                let scores = prefill_scores.ok_or_else(|| {
                    Error::InvalidConfig("prompt-seeded policy needs prefill scores".into())
                })?;
                let stream = CandidateStream::init_prefill(
                    prompt,
                    scores,
                    cfg.k_pre,
                    vocab_size,
                    cfg.window,
                )?;
                if cfg.mode == PolicyMode::CtxOnly {
                    // Freeze the prompt-seeded window as-is.
                    let active = with_specials(stream.active_set(), cfg);
                    StateKind::Fixed(active)
                } else {
                    StateKind::Windowed(stream)
                }
            }
            PolicyMode::ExtOnly => {
                StateKind::Windowed(CandidateStream::new(vocab_size, cfg.window))
            }
        };
        Ok(PolicyState {
            cfg: cfg.clone(),
            kind,
        })
    }

    pub fn mode(&self) -> PolicyMode {
        self.cfg.mode
    }

    /// The active vocabulary for the upcoming round.
    pub fn active(&self) -> ActiveVocabulary {
        match &self.kind {
            StateKind::Fixed(a) => a.clone(),
            StateKind::Windowed(s) => with_specials(s.active_set(), &self.cfg),
        }
    }

    /// Fold one round's candidates into the state and return the next active
    /// vocabulary. Fixed modes ignore the batch.
    pub fn step(&mut self, batch: &UpdateBatch) -> Result<ActiveVocabulary> {
        if let StateKind::Windowed(stream) = &mut self.kind {
            stream.push_update(batch)?;
        }
        Ok(self.active())
    }

    /// The underlying stream, when this policy keeps one.
    pub fn stream(&self) -> Option<&CandidateStream> {
        match &self.kind {
            StateKind::Windowed(s) => Some(s),
            StateKind::Fixed(_) => None,
        }
    }
}

/// Append missing special tokens to a non-empty windowed set, without ever
/// exceeding the window cap. An empty set stays empty: ext-only's first
/// round is deliberately a degenerate (draft-free) round.
fn with_specials(mut active: ActiveVocabulary, cfg: &PolicyConfig) -> ActiveVocabulary {
    if active.is_empty() {
        return active;
    }
    for &t in &cfg.specials {
        if active.len() >= cfg.window {
            break;
        }
        active.push_if_absent(t);
    }
    active
}
