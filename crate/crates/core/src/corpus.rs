//! Tokenization and corpus statistics.
//!
//! Two schemes: whitespace-delimited words with a build-then-freeze
//! vocabulary, and a fixed byte vocabulary where id = byte value + 1.
//! Id 0 is reserved for the UNK token in both schemes.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index into a model vocabulary. Id 0 is always the UNK token.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    pub const UNK: TokenId = TokenId(0);

    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl std::fmt::Display for TokenId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Word,
    Byte,
}

impl Scheme {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "word" => Ok(Scheme::Word),
            "byte" => Ok(Scheme::Byte),
            other => Err(Error::InvalidConfig(format!(
                "unknown scheme {other:?}, expected word|byte"
            ))),
        }
    }
}

/// Token ids <-> surface forms. Surfaces are distinct and id 0 is UNK.
#[derive(Clone, Debug)]
pub struct Vocabulary {
    surfaces: Vec<String>,
}

impl Vocabulary {
    fn new(surfaces: Vec<String>) -> Self {
        debug_assert!(!surfaces.is_empty());
        Vocabulary { surfaces }
    }

    pub fn size(&self) -> usize {
        self.surfaces.len()
    }

    pub fn surface(&self, t: TokenId) -> Option<&str> {
        self.surfaces.get(t.index()).map(|s| s.as_str())
    }
}

const UNK_SURFACE: &str = "<unk>";

/// Text <-> token ids under one scheme.
///
/// Word tokenizers start in building mode (new words get fresh ids in first
/// occurrence order) and can be frozen, after which unknown words map to UNK.
/// Byte tokenizers are always frozen over a fixed 257-entry vocabulary.
#[derive(Clone, Debug)]
pub struct Tokenizer {
    scheme: Scheme,
    surfaces: Vec<String>,
    lookup: HashMap<String, u32>,
    frozen: bool,
}

impl Tokenizer {
    /// Word scheme in building mode; the vocabulary starts as just UNK.
    pub fn word_builder() -> Self {
        Tokenizer {
            scheme: Scheme::Word,
            surfaces: vec![UNK_SURFACE.to_string()],
            lookup: HashMap::new(),
            frozen: false,
        }
    }

    /// Byte scheme: ids 1..=256 cover every byte value, id 0 stays UNK.
    pub fn byte() -> Self {
        let mut surfaces = Vec::with_capacity(257);
        surfaces.push(UNK_SURFACE.to_string());
        for b in 0u32..256 {
            let c = b as u8 as char;
            if b >= 0x21 && b <= 0x7e {
                surfaces.push(c.to_string());
            } else {
                surfaces.push(format!("\\x{b:02x}"));
            }
        }
        Tokenizer {
            scheme: Scheme::Byte,
            surfaces,
            lookup: HashMap::new(),
            frozen: true,
        }
    }

    pub fn for_scheme(scheme: Scheme) -> Self {
        match scheme {
            Scheme::Word => Tokenizer::word_builder(),
            Scheme::Byte => Tokenizer::byte(),
        }
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn vocab_size(&self) -> usize {
        self.surfaces.len()
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn vocab(&self) -> Vocabulary {
        Vocabulary::new(self.surfaces.clone())
    }

    /// Map text to ids. In building mode unseen words are assigned the next
    /// free id; in frozen mode they map to UNK.
    pub fn tokenize(&mut self, text: &str) -> Vec<TokenId> {
        match self.scheme {
            Scheme::Byte => text.bytes().map(|b| TokenId(b as u32 + 1)).collect(),
            Scheme::Word => {
                let mut out = Vec::new();
                for word in text.split_whitespace() {
                    if let Some(&id) = self.lookup.get(word) {
                        out.push(TokenId(id));
                    } else if self.frozen {
                        out.push(TokenId::UNK);
                    } else {
                        let id = self.surfaces.len() as u32;
                        self.surfaces.push(word.to_string());
                        self.lookup.insert(word.to_string(), id);
                        out.push(TokenId(id));
                    }
                }
                out
            }
        }
    }

    /// Inverse map. Word scheme joins surfaces with single spaces; byte
    /// scheme reconstructs the original bytes, so it round-trips exactly.
    pub fn detokenize(&self, tokens: &[TokenId]) -> Result<String> {
        match self.scheme {
            Scheme::Byte => {
                let mut bytes = Vec::with_capacity(tokens.len());
                for &t in tokens {
                    if t.0 == 0 || t.0 > 256 {
                        return Err(Error::Corpus(format!(
                            "token id {t} is not a byte-scheme id"
                        )));
                    }
                    bytes.push((t.0 - 1) as u8);
                }
                String::from_utf8(bytes)
                    .map_err(|e| Error::Corpus(format!("detokenized bytes are not UTF-8: {e}")))
            }
            Scheme::Word => {
                let mut words = Vec::with_capacity(tokens.len());
                for &t in tokens {
                    match self.surfaces.get(t.index()) {
                        Some(s) => words.push(s.as_str()),
                        None => {
                            return Err(Error::Corpus(format!("token id {t} out of vocabulary")))
                        }
                    }
                }
                Ok(words.join(" "))
            }
        }
    }
}

/// Per-token corpus counts plus the frequency ranking used by static top-k
/// vocabularies: rank is sorted by count descending, ties by ascending id.
#[derive(Clone, Debug)]
pub struct FrequencyTable {
    counts: Vec<u64>,
    rank: Vec<TokenId>,
    rank_of: Vec<u32>,
}

impl FrequencyTable {
    pub fn build<I>(tokens: I, vocab_size: usize) -> Result<Self>
    where
        I: IntoIterator<Item = TokenId>,
    {
        let mut counts = vec![0u64; vocab_size];
        for t in tokens {
            match counts.get_mut(t.index()) {
                Some(c) => *c += 1,
                None => {
                    return Err(Error::Corpus(format!(
                        "token id {t} outside vocabulary of size {vocab_size}"
                    )))
                }
            }
        }
        let mut rank: Vec<TokenId> = (0..vocab_size as u32).map(TokenId).collect();
        rank.sort_by_key(|t| (std::cmp::Reverse(counts[t.index()]), t.0));
        let mut rank_of = vec![0u32; vocab_size];
        for (pos, t) in rank.iter().enumerate() {
            rank_of[t.index()] = pos as u32;
        }
        Ok(FrequencyTable {
            counts,
            rank,
            rank_of,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.counts.len()
    }

    pub fn count(&self, t: TokenId) -> u64 {
        self.counts[t.index()]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Tokens from most to least frequent.
    pub fn rank_order(&self) -> &[TokenId] {
        &self.rank
    }

    /// Position of `t` in the frequency ranking (0 = most frequent).
    pub fn rank_of(&self, t: TokenId) -> usize {
        self.rank_of[t.index()] as usize
    }

    /// The `k` most frequent tokens, in rank order.
    pub fn top_k(&self, k: usize) -> &[TokenId] {
        &self.rank[..k.min(self.rank.len())]
    }

    /// CSV export: header `token_id,count,rank`, one row per token id.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "token_id,count,rank")?;
        for id in 0..self.counts.len() {
            writeln!(w, "{id},{},{}", self.counts[id], self.rank_of[id])?;
        }
        Ok(())
    }
}

/// Read a UTF-8 corpus file: one document per line.
pub fn load_corpus(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path)?;
    Ok(text.lines().map(|l| l.to_string()).collect())
}

/// Tokenize every document with a shared vocabulary, then freeze it.
pub fn tokenize_corpus(tokenizer: &mut Tokenizer, docs: &[String]) -> Vec<Vec<TokenId>> {
    let out = docs.iter().map(|d| tokenizer.tokenize(d)).collect();
    tokenizer.freeze();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn word_building_assigns_first_occurrence_ids() {
        let mut tok = Tokenizer::word_builder();
        assert_eq!(tok.tokenize("a b a"), vec![TokenId(1), TokenId(2), TokenId(1)]);
        let vocab = tok.vocab();
        assert_eq!(vocab.size(), 3);
        assert_eq!(vocab.surface(TokenId(0)), Some("<unk>"));
        assert_eq!(vocab.surface(TokenId(1)), Some("a"));
        assert_eq!(vocab.surface(TokenId(2)), Some("b"));
    }

    #[test]
    fn frozen_word_tokenizer_maps_unknown_to_unk() {
        let mut tok = Tokenizer::word_builder();
        tok.tokenize("a b");
        tok.freeze();
        assert_eq!(tok.tokenize("a c b"), vec![TokenId(1), TokenId::UNK, TokenId(2)]);
        assert_eq!(tok.vocab_size(), 3, "frozen vocab must not grow");
    }

    #[test]
    fn byte_ids_are_byte_plus_one() {
        let mut tok = Tokenizer::byte();
        assert_eq!(tok.tokenize("hi"), vec![TokenId(105), TokenId(106)]);
        assert_eq!(tok.vocab_size(), 257);
    }

    #[test]
    fn byte_detokenize_round_trips() {
        let mut tok = Tokenizer::byte();
        let s = "pack my box with five dozen liquor jugs\n\t!";
        let ids = tok.tokenize(s);
        assert_eq!(tok.detokenize(&ids).unwrap(), s);
    }

    #[test]
    fn byte_detokenize_rejects_out_of_range_ids() {
        let tok = Tokenizer::byte();
        assert!(tok.detokenize(&[TokenId(0)]).is_err());
        assert!(tok.detokenize(&[TokenId(257)]).is_err());
    }

    #[test]
    fn frequency_ranks_by_count_then_id() {
        let toks = [1u32, 1, 2, 3].map(TokenId);
        let ft = FrequencyTable::build(toks, 4).unwrap();
        assert_eq!(ft.count(TokenId(1)), 2);
        assert_eq!(ft.count(TokenId(0)), 0);
        assert_eq!(ft.rank_order(), &[1, 2, 3, 0].map(TokenId));
        assert_eq!(ft.rank_of(TokenId(1)), 0);
        assert_eq!(ft.rank_of(TokenId(0)), 3);
        assert_eq!(ft.top_k(2), &[TokenId(1), TokenId(2)]);
    }

    #[test]
    fn empty_corpus_ranks_all_ties_by_id() {
        let ft = FrequencyTable::build(std::iter::empty(), 4).unwrap();
        assert_eq!(ft.rank_order(), &[0, 1, 2, 3].map(TokenId));
        assert_eq!(ft.total(), 0);
    }

    #[test]
    fn frequency_rejects_out_of_vocab_ids() {
        assert!(FrequencyTable::build([TokenId(4)], 4).is_err());
    }

    #[test]
    fn frequency_csv_schema() {
        let ft = FrequencyTable::build([1u32, 1, 2, 3].map(TokenId), 4).unwrap();
        let mut buf = Vec::new();
        ft.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "token_id,count,rank\n0,0,3\n1,2,0\n2,1,1\n3,1,2\n");
    }

    #[test]
    fn counts_sum_to_corpus_length() {
        let toks: Vec<TokenId> = (0..100u32).map(|i| TokenId(i % 7)).collect();
        let ft = FrequencyTable::build(toks.iter().copied(), 7).unwrap();
        assert_eq!(ft.total(), 100);
    }

    proptest! {
        #[test]
        fn byte_round_trip_arbitrary_strings(s in ".*") {
            let mut tok = Tokenizer::byte();
            let ids = tok.tokenize(&s);
            prop_assert_eq!(tok.detokenize(&ids).unwrap(), s);
        }

        #[test]
        fn word_ids_stay_in_vocab(words in proptest::collection::vec("[a-z]{1,6}", 0..40)) {
            let mut tok = Tokenizer::word_builder();
            let text = words.join(" ");
            let ids = tok.tokenize(&text);
            let v = tok.vocab_size() as u32;
            prop_assert!(ids.iter().all(|t| t.0 < v));
            prop_assert_eq!(ids.len(), words.len());
        }
    }
}
