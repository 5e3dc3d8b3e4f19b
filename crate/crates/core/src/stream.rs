//! The candidate token stream and its recency window.
//!
//! Every token that becomes a draft candidate is appended to one append-only
//! stream: the prompt and its per-position top-k seeds first, then each
//! round's draft-tree tokens followed by the verifier's top-k. The *active
//! vocabulary* for a round is the deduplicated suffix of the last `window`
//! stream entries, ordered by first occurrence inside that suffix — so
//! eviction is pure recency, and the window size is a hard cap on how many
//! LM-head rows a round can touch.
//!
//! Only a bounded suffix of the stream is retained: a ring of `2 * window`
//! entries compacted in place when full. A per-token occurrence count plus a
//! membership bitmap make window lookups O(1).

use std::collections::HashMap;
use std::sync::Arc;

use crate::bitmap::Bitmap;
use crate::corpus::TokenId;
use crate::error::{Error, Result};
use crate::select;

/// Distinct tokens of one drafting round, with stable local row indices.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ActiveVocabulary {
    ids: Vec<TokenId>,
    local: HashMap<TokenId, u32>,
}

impl ActiveVocabulary {
    /// Build from distinct global ids; local index i maps to `ids[i]`.
    pub fn new(ids: Vec<TokenId>) -> Self {
        let mut local = HashMap::with_capacity(ids.len());
        for (i, &t) in ids.iter().enumerate() {
            let prev = local.insert(t, i as u32);
            debug_assert!(prev.is_none(), "active vocabulary ids must be distinct");
        }
        ActiveVocabulary { ids, local }
    }

    /// The whole vocabulary `0..v` in identity order.
    pub fn full(v: usize) -> Self {
        ActiveVocabulary::new((0..v as u32).map(TokenId).collect())
    }

    pub fn empty() -> Self {
        ActiveVocabulary::default()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Local index -> global id.
    pub fn ids(&self) -> &[TokenId] {
        &self.ids
    }

    pub fn contains(&self, t: TokenId) -> bool {
        self.local.contains_key(&t)
    }

    /// Global id -> local row index, if present.
    pub fn local_of(&self, t: TokenId) -> Option<u32> {
        self.local.get(&t).copied()
    }

    /// Append a token at the next local index if absent. Returns true if added.
    pub fn push_if_absent(&mut self, t: TokenId) -> bool {
        if self.contains(t) {
            return false;
        }
        self.local.insert(t, self.ids.len() as u32);
        self.ids.push(t);
        true
    }
}

/// Set difference between consecutive active vocabularies:
/// (`entered` in next order, `exited` in prev order).
pub fn delta_since(
    prev: &ActiveVocabulary,
    next: &ActiveVocabulary,
) -> (Vec<TokenId>, Vec<TokenId>) {
    let entered = next
        .ids()
        .iter()
        .copied()
        .filter(|&t| !prev.contains(t))
        .collect();
    let exited = prev
        .ids()
        .iter()
        .copied()
        .filter(|&t| !next.contains(t))
        .collect();
    (entered, exited)
}

/// One round of stream growth: draft-tree tokens, then verifier top-k.
#[derive(Clone, Debug, Default)]
pub struct UpdateBatch {
    pub draft_candidates: Vec<TokenId>,
    pub verify_candidates: Vec<TokenId>,
}

impl UpdateBatch {
    pub fn len(&self) -> usize {
        self.draft_candidates.len() + self.verify_candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Append-only candidate stream with a recency window of `window` entries.
#[derive(Clone, Debug)]
pub struct CandidateStream {
    vocab_size: usize,
    window: usize,
    /// Suffix of the full stream; always holds at least the current window.
    retained: Vec<TokenId>,
    /// Entries discarded from the front of `retained` by compaction.
    dropped: u64,
    /// Total entries ever appended.
    total: u64,
    /// Occurrence count of each token within the current window.
    occurrences: Vec<u32>,
    /// token id ∈ current window, maintained incrementally.
    member: Bitmap,
}

impl CandidateStream {
    /// An empty stream (no prompt seeding).
    pub fn new(vocab_size: usize, window: usize) -> Self {
        assert!(window >= 1, "window must be at least 1");
        assert!(vocab_size >= 1);
        CandidateStream {
            vocab_size,
            window,
            retained: Vec::with_capacity(2 * window),
            dropped: 0,
            total: 0,
            occurrences: vec![0; vocab_size],
            member: Bitmap::new(vocab_size),
        }
    }

    /// Seed from a prompt: the prompt tokens in order, then the union of each
    /// position's top-`k_pre` scored tokens. The union is deduplicated across
    /// positions in (position, rank) first-occurrence order; duplicates with
    /// the prompt itself are kept (the stream permits repeats).
    pub fn init_prefill(
        prompt: &[TokenId],
        prefill_scores: &[Vec<f64>],
        k_pre: usize,
        vocab_size: usize,
        window: usize,
    ) -> Result<Self> {
        if prompt.is_empty() {
            return Err(Error::EmptyPrompt);
        }
        if prefill_scores.len() != prompt.len() {
            return Err(Error::DimMismatch(format!(
                "{} prompt positions but {} score vectors",
                prompt.len(),
                prefill_scores.len()
            )));
        }
        let mut stream = CandidateStream::new(vocab_size, window);
        for &t in prompt {
            stream.push(t)?;
        }
        let mut seen = Bitmap::new(vocab_size);
        let mut union = Vec::new();
        for scores in prefill_scores {
            if scores.len() != vocab_size {
                return Err(Error::DimMismatch(format!(
                    "score vector of length {} for vocabulary of size {vocab_size}",
                    scores.len()
                )));
            }
            for pos in select::top_k(scores, k_pre) {
                if !seen.get(pos) {
                    seen.set(pos);
                    union.push(TokenId(pos as u32));
                }
            }
        }
        for t in union {
            stream.push(t)?;
        }
        Ok(stream)
    }

    /// Append one round's batch: draft candidates first, then verify candidates.
    pub fn push_update(&mut self, batch: &UpdateBatch) -> Result<()> {
        for &t in &batch.draft_candidates {
            self.push(t)?;
        }
        for &t in &batch.verify_candidates {
            self.push(t)?;
        }
        Ok(())
    }

    /// Append a single token, advancing the window by one entry.
    pub fn push(&mut self, t: TokenId) -> Result<()> {
        if t.index() >= self.vocab_size {
            return Err(Error::Corpus(format!(
                "token id {t} outside vocabulary of size {}",
                self.vocab_size
            )));
        }
        // Account for the entry that slides out of the window, if any.
        if self.total >= self.window as u64 {
            let leave = (self.total - self.window as u64 - self.dropped) as usize;
            let gone = self.retained[leave];
            let occ = &mut self.occurrences[gone.index()];
            *occ -= 1;
            if *occ == 0 {
                self.member.clear(gone.index());
            }
        }
        // Compact the ring when it reaches twice the window.
        if self.retained.len() == 2 * self.window {
            let cut = self.retained.len() - self.window;
            self.retained.copy_within(cut.., 0);
            self.retained.truncate(self.window);
            self.dropped += cut as u64;
        }
        self.retained.push(t);
        self.occurrences[t.index()] += 1;
        self.member.set(t.index());
        self.total += 1;
        Ok(())
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// Total entries ever appended.
    pub fn total_appended(&self) -> u64 {
        self.total
    }

    /// O(1) window membership via the bitmap.
    pub fn contains(&self, t: TokenId) -> bool {
        t.index() < self.vocab_size && self.member.get(t.index())
    }

    pub fn membership(&self) -> &Bitmap {
        &self.member
    }

    /// The current window: the last `min(total, window)` entries in order.
    pub fn window_entries(&self) -> &[TokenId] {
        let len = (self.total.min(self.window as u64)) as usize;
        &self.retained[self.retained.len() - len..]
    }

    /// Deduplicated window, ordered by first occurrence (oldest first).
    pub fn active_set(&self) -> ActiveVocabulary {
        let mut active = ActiveVocabulary::empty();
        for &t in self.window_entries() {
            active.push_if_absent(t);
        }
        debug_assert!(active.len() <= self.window);
        debug_assert_eq!(active.len(), self.member.count_ones());
        active
    }
}

/// Shared handle used by rounds that all score the same vocabulary.
pub type ActiveVocab = Arc<ActiveVocabulary>;
