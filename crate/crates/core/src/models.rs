//! Toy language models: counted n-grams and seeded linear-head models.
//!
//! Both families are deterministic and cheap enough to verify against
//! brute-force oracles. The count family has the temporal locality of real
//! text (it is trained on a corpus); the linear family has an explicit
//! `z = W · h` LM head so the pruned-head gather path can be exercised
//! literally. Scores are f64 end to end; linear weights are f32-valued so
//! the binary sidecar round-trips bit-exactly.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::TokenId;
use crate::error::{Error, Result};

/// Backbone output: a dense activation of the model dimension.
pub type HiddenState = Vec<f64>;

// Count-family defaults: target conditions on three tokens, the draft on two.
pub const TARGET_ORDER: usize = 3;
pub const DRAFT_ORDER: usize = 2;
pub const SMOOTHING: f64 = 0.1;

/// Sparse continuation counts for one observed context.
#[derive(Clone, Debug)]
struct Bucket {
    total: u64,
    counts: Vec<(TokenId, u64)>,
}

/// Count-based n-gram model with Laplace smoothing and recursive backoff.
///
/// `order` is the number of context tokens conditioned on. A query backs off
/// to shorter suffixes whenever the current suffix was never observed,
/// bottoming out at the empty context; on an empty corpus that degenerates to
/// the uniform distribution `1/V`.
#[derive(Clone, Debug)]
pub struct CountModel {
    vocab_size: usize,
    order: usize,
    alpha: f64,
    /// tables[k] maps length-k contexts to their continuation counts.
    tables: Vec<HashMap<Box<[TokenId]>, Bucket>>,
}

impl CountModel {
    pub fn train(docs: &[Vec<TokenId>], vocab_size: usize, order: usize, alpha: f64) -> Self {
        assert!(vocab_size >= 1);
        assert!(alpha > 0.0, "smoothing mass must be positive");
        let mut raw: Vec<HashMap<Box<[TokenId]>, HashMap<TokenId, u64>>> =
            (0..=order).map(|_| HashMap::new()).collect();
        for doc in docs {
            for i in 0..doc.len() {
                let next = doc[i];
                debug_assert!(next.index() < vocab_size);
                for k in 0..=order.min(i) {
                    let ctx: Box<[TokenId]> = doc[i - k..i].into();
                    *raw[k].entry(ctx).or_default().entry(next).or_insert(0) += 1;
                }
            }
        }
        let tables = raw
            .into_iter()
            .map(|table| {
                table
                    .into_iter()
                    .map(|(ctx, counts)| {
                        let mut counts: Vec<(TokenId, u64)> = counts.into_iter().collect();
                        counts.sort_by_key(|&(t, _)| t);
                        let total = counts.iter().map(|&(_, c)| c).sum();
                        (ctx, Bucket { total, counts })
                    })
                    .collect()
            })
            .collect();
        CountModel {
            vocab_size,
            order,
            alpha,
            tables,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Smoothed next-token distribution given a context (which may be empty).
    ///
    /// P(t | ctx) = (count(suffix, t) + alpha) / (total(suffix) + alpha * V)
    /// for the longest observed suffix of the context, capped at `order`.
    pub fn next_distribution(&self, ctx: &[TokenId]) -> Vec<f64> {
        let start = self.order.min(ctx.len());
        for k in (0..=start).rev() {
            let suffix = &ctx[ctx.len() - k..];
            if let Some(bucket) = self.tables[k].get(suffix) {
                return self.smoothed(bucket);
            }
        }
        // Nothing observed at any order (empty corpus): pure smoothing.
        let empty = Bucket {
            total: 0,
            counts: Vec::new(),
        };
        self.smoothed(&empty)
    }

    fn smoothed(&self, bucket: &Bucket) -> Vec<f64> {
        let denom = bucket.total as f64 + self.alpha * self.vocab_size as f64;
        let base = self.alpha / denom;
        let mut out = vec![base; self.vocab_size];
        for &(t, c) in &bucket.counts {
            out[t.index()] += c as f64 / denom;
        }
        out
    }
}

/// Final-projection matrix of a linear model: `V x d`, row per token.
#[derive(Clone, Debug)]
pub struct LMHead {
    weights: Arc<Vec<f64>>,
    vocab_size: usize,
    dim: usize,
}

impl LMHead {
    pub fn new(weights: Vec<f64>, vocab_size: usize, dim: usize) -> Result<Self> {
        if weights.len() != vocab_size * dim {
            return Err(Error::DimMismatch(format!(
                "{} weights for a {vocab_size}x{dim} head",
                weights.len()
            )));
        }
        Ok(LMHead {
            weights: Arc::new(weights),
            vocab_size,
            dim,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, token: TokenId) -> &[f64] {
        let i = token.index();
        &self.weights[i * self.dim..(i + 1) * self.dim]
    }

    /// Full-vocabulary logits `z[i] = W[i,:] . h`, summed in ascending
    /// hidden-index order (the same order the pruned path uses, so rows
    /// compare bit-exactly).
    pub fn full_logits(&self, h: &[f64]) -> Result<Vec<f64>> {
        if h.len() != self.dim {
            return Err(Error::DimMismatch(format!(
                "hidden state of length {} against head dim {}",
                h.len(),
                self.dim
            )));
        }
        let mut z = Vec::with_capacity(self.vocab_size);
        for i in 0..self.vocab_size {
            z.push(dot(&self.weights[i * self.dim..(i + 1) * self.dim], h));
        }
        Ok(z)
    }

    /// Binary sidecar: 16-byte header (magic `NSLM`, then u32 LE vocab size,
    /// dim, seed), followed by the weights as little-endian f32, row-major.
    pub fn write_sidecar(&self, path: &Path, seed: u32) -> Result<()> {
        let mut bytes = Vec::with_capacity(16 + self.weights.len() * 4);
        bytes.extend_from_slice(b"NSLM");
        bytes.extend_from_slice(&(self.vocab_size as u32).to_le_bytes());
        bytes.extend_from_slice(&(self.dim as u32).to_le_bytes());
        bytes.extend_from_slice(&seed.to_le_bytes());
        for &w in self.weights.iter() {
            bytes.extend_from_slice(&(w as f32).to_le_bytes());
        }
        std::fs::write(path, bytes)?;
        Ok(())
    }

    /// Read a sidecar written by [`LMHead::write_sidecar`]; returns the head
    /// and the recorded seed.
    pub fn read_sidecar(path: &Path) -> Result<(Self, u32)> {
        let bytes = std::fs::read(path)?;
        if bytes.len() < 16 {
            return Err(Error::Sidecar("file shorter than the 16-byte header".into()));
        }
        if &bytes[0..4] != b"NSLM" {
            return Err(Error::Sidecar("bad magic".into()));
        }
        let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        let vocab_size = u32_at(4) as usize;
        let dim = u32_at(8) as usize;
        let seed = u32_at(12);
        let expect = 16 + vocab_size * dim * 4;
        if bytes.len() != expect {
            return Err(Error::Sidecar(format!(
                "expected {expect} bytes for a {vocab_size}x{dim} head, found {}",
                bytes.len()
            )));
        }
        let weights = bytes[16..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Ok((LMHead::new(weights, vocab_size, dim)?, seed))
    }
}

#[inline]
fn dot(row: &[f64], h: &[f64]) -> f64 {
    let mut acc = 0.0;
    for k in 0..row.len() {
        acc += row[k] * h[k];
    }
    acc
}

/// Linear-head model: token embeddings are averaged over the last
/// `context_window` tokens, passed through a square mixing map, and projected
/// by the LM head.
#[derive(Clone, Debug)]
pub struct LinearModel {
    vocab_size: usize,
    dim: usize,
    context_window: usize,
    embedding: Arc<Vec<f64>>, // V x d
    mixing: Arc<Vec<f64>>,    // d x d
    pub head: LMHead,
}

impl LinearModel {
    pub fn from_parts(
        embedding: Vec<f64>,
        mixing: Vec<f64>,
        head: LMHead,
        context_window: usize,
    ) -> Result<Self> {
        let (v, d) = (head.vocab_size(), head.dim());
        if embedding.len() != v * d {
            return Err(Error::DimMismatch(format!(
                "{} embedding entries for a {v}x{d} model",
                embedding.len()
            )));
        }
        if mixing.len() != d * d {
            return Err(Error::DimMismatch(format!(
                "{} mixing entries for dim {d}",
                mixing.len()
            )));
        }
        if context_window == 0 {
            return Err(Error::InvalidConfig("context window must be >= 1".into()));
        }
        Ok(LinearModel {
            vocab_size: v,
            dim: d,
            context_window,
            embedding: Arc::new(embedding),
            mixing: Arc::new(mixing),
            head,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Mean of the last `context_window` token embeddings, mixed by the
    /// square map. Errors on an empty context.
    pub fn backbone(&self, ctx: &[TokenId]) -> Result<HiddenState> {
        if ctx.is_empty() {
            return Err(Error::EmptyContext);
        }
        let tail = &ctx[ctx.len() - self.context_window.min(ctx.len())..];
        let mut mean = vec![0.0; self.dim];
        for &t in tail {
            debug_assert!(t.index() < self.vocab_size);
            let row = &self.embedding[t.index() * self.dim..(t.index() + 1) * self.dim];
            for k in 0..self.dim {
                mean[k] += row[k];
            }
        }
        let inv = 1.0 / tail.len() as f64;
        for k in 0..self.dim {
            mean[k] *= inv;
        }
        let mut h = vec![0.0; self.dim];
        for i in 0..self.dim {
            h[i] = dot(&self.mixing[i * self.dim..(i + 1) * self.dim], &mean);
        }
        Ok(h)
    }

    /// Full-vocabulary scores: backbone then the complete LM head.
    pub fn full_scores(&self, ctx: &[TokenId]) -> Result<Vec<f64>> {
        self.head.full_logits(&self.backbone(ctx)?)
    }
}

/// Draw an f32-valued uniform in [-1, 1), widened to f64.
fn sample_weight(rng: &mut ChaCha8Rng) -> f64 {
    rng.gen_range(-1.0f32..1.0) as f64
}

/// Round an f64 product to the nearest f32 value so sidecars are lossless.
fn quantize(x: f64) -> f64 {
    x as f32 as f64
}

/// Build a seeded (target, draft) linear pair sharing the embedding and
/// mixing map. Both heads come from one random factorization `W = A . B`
/// of rank `min(V, d)`; the target keeps every factor while the draft keeps
/// only the first `keep_rank`, so the draft approximates the target and
/// equals it exactly when `keep_rank` is the full rank.
pub fn seeded_linear_pair(
    vocab_size: usize,
    dim: usize,
    context_window: usize,
    keep_rank: usize,
    seed: u32,
) -> Result<(LinearModel, LinearModel)> {
    let rank = vocab_size.min(dim);
    if keep_rank == 0 || keep_rank > rank {
        return Err(Error::InvalidConfig(format!(
            "keep_rank {keep_rank} outside 1..={rank}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed as u64);
    let embedding: Vec<f64> = (0..vocab_size * dim).map(|_| sample_weight(&mut rng)).collect();
    let mixing: Vec<f64> = (0..dim * dim).map(|_| sample_weight(&mut rng)).collect();
    let a: Vec<f64> = (0..vocab_size * rank).map(|_| sample_weight(&mut rng)).collect();
    let b: Vec<f64> = (0..rank * dim).map(|_| sample_weight(&mut rng)).collect();
    let product = |keep: usize| -> Vec<f64> {
        let mut w = vec![0.0; vocab_size * dim];
        for i in 0..vocab_size {
            for j in 0..dim {
                let mut acc = 0.0;
                for k in 0..keep {
                    acc += a[i * rank + k] * b[k * dim + j];
                }
                w[i * dim + j] = quantize(acc);
            }
        }
        w
    };
    let target_head = LMHead::new(product(rank), vocab_size, dim)?;
    let draft_head = LMHead::new(product(keep_rank), vocab_size, dim)?;
    let target = LinearModel::from_parts(
        embedding.clone(),
        mixing.clone(),
        target_head,
        context_window,
    )?;
    let draft = LinearModel::from_parts(embedding, mixing, draft_head, context_window)?;
    Ok((target, draft))
}

/// Either toy family behind one scoring interface.
#[derive(Clone, Debug)]
pub enum Model {
    Count(CountModel),
    Linear(LinearModel),
}

impl Model {
    pub fn vocab_size(&self) -> usize {
        match self {
            Model::Count(m) => m.vocab_size(),
            Model::Linear(m) => m.vocab_size(),
        }
    }

    /// Scores over the full vocabulary for the next position.
    /// (Probabilities for the count family, logits for the linear family —
    /// ranking is all the decode loop consumes.)
    pub fn full_scores(&self, ctx: &[TokenId]) -> Result<Vec<f64>> {
        match self {
            Model::Count(m) => Ok(m.next_distribution(ctx)),
            Model::Linear(m) => m.full_scores(ctx),
        }
    }
}

/// A draft/target pair plus the optional end-of-sequence token.
#[derive(Clone, Debug)]
pub struct ModelPair {
    pub target: Model,
    pub draft: Model,
    pub eos: Option<TokenId>,
}

impl ModelPair {
    /// Count family trained on a tokenized corpus: order-3 target, order-2
    /// draft, shared Laplace smoothing.
    pub fn count_family(docs: &[Vec<TokenId>], vocab_size: usize) -> Self {
        ModelPair {
            target: Model::Count(CountModel::train(docs, vocab_size, TARGET_ORDER, SMOOTHING)),
            draft: Model::Count(CountModel::train(docs, vocab_size, DRAFT_ORDER, SMOOTHING)),
            eos: None,
        }
    }

    /// Seeded linear family; the draft head keeps half the factor rank.
    pub fn linear_family(vocab_size: usize, dim: usize, seed: u32) -> Result<Self> {
        let rank = vocab_size.min(dim);
        let keep = (rank / 2).max(1);
        let (target, draft) = seeded_linear_pair(vocab_size, dim, TARGET_ORDER, keep, seed)?;
        Ok(ModelPair {
            target: Model::Linear(target),
            draft: Model::Linear(draft),
            eos: None,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.target.vocab_size()
    }
}
