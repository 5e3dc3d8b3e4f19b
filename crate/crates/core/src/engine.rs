//! The draft/verify decode loop.
//!
//! Each round drafts a shallow token tree from the pruned vocabulary, has
//! the target verify it greedily, emits the accepted prefix plus one bonus
//! token, then feeds the round's candidates back into the policy. Decoding
//! is lossless by construction: a draft token is only ever accepted when it
//! equals the target's argmax at its position, and the bonus token *is* the
//! target's argmax, so outputs match plain autoregressive decoding exactly.
//!
//! For linear-family drafts the pruned scoring goes through the repack
//! buffer: the gather for round t+1 is scheduled as soon as round t's active
//! set is known, overlaps the next backbone call, and is awaited immediately
//! before the pruned LM-head read.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::{FrequencyTable, TokenId};
use crate::error::{Error, Result};
use crate::gather::{GatherMode, GatherPipeline, PrunedLogits, RepackBuffer};
use crate::models::{CountModel, LinearModel, Model, ModelPair};
use crate::policy::{PolicyConfig, PolicyMode, PolicyState};
use crate::select;
use crate::stream::{delta_since, ActiveVocab, ActiveVocabulary, UpdateBatch};

/// Shape limits for one draft round.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DraftConfig {
    /// Tree depth: pruned scoring calls per round.
    pub depth: usize,
    /// Children added at each expanded node.
    pub width: usize,
    /// Hard cap on tree nodes per round.
    pub max_draft_tokens: usize,
    /// Draft tokens scored per head call; only the latency model reads it.
    pub batch: usize,
    /// How head rows reach the repack buffer.
    pub gather: GatherMode,
}

impl Default for DraftConfig {
    fn default() -> Self {
        DraftConfig {
            depth: 5,
            width: 1,
            max_draft_tokens: 60,
            batch: 1,
            gather: GatherMode::Full,
        }
    }
}

impl DraftConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("depth", self.depth),
            ("width", self.width),
            ("max_draft_tokens", self.max_draft_tokens),
            ("batch", self.batch),
        ] {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be >= 1")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DraftNode {
    pub token: TokenId,
    /// Index of the parent node; None for children of the root.
    pub parent: Option<usize>,
    pub depth: usize,
}

/// One round's proposed tokens: a path of expanded nodes, each with up to
/// `width` sibling children.
#[derive(Clone, Debug, Default)]
pub struct DraftTree {
    /// Accepted prefix the tree was drafted from.
    pub root_context: Vec<TokenId>,
    pub nodes: Vec<DraftNode>,
}

impl DraftTree {
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Deepest node depth (0 for an empty tree).
    pub fn depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    /// Distinct tokens in first-occurrence (insertion) order.
    pub fn tokens_first_occurrence(&self) -> Vec<TokenId> {
        let mut seen = std::collections::HashSet::new();
        let mut out = Vec::new();
        for n in &self.nodes {
            if seen.insert(n.token) {
                out.push(n.token);
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VerifyResult {
    /// Longest tree path matching the target's greedy choices.
    pub accepted: Vec<TokenId>,
    /// Target argmax at the first position the tree missed (or one past the
    /// accepted path) — emitted for free after the accepted tokens.
    pub bonus: TokenId,
}

impl VerifyResult {
    pub fn accepted_len(&self) -> usize {
        self.accepted.len()
    }
}

/// Draft-side scoring for one decode session. The linear family routes
/// through the gather pipeline; the count family restricts its distribution
/// to the active set directly (it has no weight rows to stage).
pub struct DraftScorer<'a> {
    kind: ScorerKind<'a>,
}

enum ScorerKind<'a> {
    Count(&'a CountModel),
    Linear {
        model: &'a LinearModel,
        pipeline: GatherPipeline,
        buffer: RepackBuffer,
        mode: GatherMode,
    },
}

impl<'a> DraftScorer<'a> {
    pub fn new(draft: &'a Model, capacity: usize, mode: GatherMode) -> DraftScorer<'a> {
        let kind = match draft {
            Model::Count(m) => ScorerKind::Count(m),
            Model::Linear(m) => ScorerKind::Linear {
                model: m,
                pipeline: GatherPipeline::new(),
                buffer: RepackBuffer::new(capacity.max(1), m.dim()),
                mode,
            },
        };
        DraftScorer { kind }
    }

    /// Schedule the gather for the next round's active set. Returns
    /// immediately; the copy overlaps the caller's subsequent compute.
    pub fn stage(&mut self, active: &ActiveVocabulary) -> Result<()> {
        if let ScorerKind::Linear {
            model,
            pipeline,
            buffer,
            mode,
        } = &mut self.kind
        {
            // Close out any still-pending gather first (possible only after
            // a draft-free round, where nothing ever awaited it).
            match buffer.wait() {
                Ok(()) | Err(Error::NoGatherScheduled) => {}
                Err(e) => return Err(e),
            }
            pipeline.schedule_with(&model.head, active.clone(), buffer, *mode, None)?;
        }
        Ok(())
    }

    /// Scores over the active set for the next position after `ctx`.
    /// Linear: backbone first (overlapping the in-flight copy), then wait,
    /// then the pruned head read.
    pub fn pruned_scores(&mut self, ctx: &[TokenId], active: &ActiveVocab) -> Result<PrunedLogits> {
        match &mut self.kind {
            ScorerKind::Count(m) => {
                let dist = m.next_distribution(ctx);
                let values = active.ids().iter().map(|t| dist[t.index()]).collect();
                Ok(PrunedLogits {
                    values,
                    vocab: Arc::clone(active),
                })
            }
            ScorerKind::Linear { model, buffer, .. } => {
                let h = model.backbone(ctx)?;
                buffer.wait()?;
                buffer.pruned_logits(&h)
            }
        }
    }
}

/// Draft a tree from the pruned vocabulary: at each depth the best path's
/// node is expanded with its top-`width` children (score descending, ties by
/// ascending token id), and the best child carries the path one level
/// deeper. An empty active set yields an empty tree.
pub fn draft_round(
    scorer: &mut DraftScorer,
    context: &[TokenId],
    active: &ActiveVocab,
    cfg: &DraftConfig,
) -> Result<DraftTree> {
    let mut tree = DraftTree {
        root_context: context.to_vec(),
        nodes: Vec::new(),
    };
    if active.is_empty() {
        return Ok(tree);
    }
    let mut ctx = context.to_vec();
    let mut parent: Option<usize> = None;
    for depth in 1..=cfg.depth {
        let width = cfg.width.min(cfg.max_draft_tokens - tree.nodes.len());
        if width == 0 {
            break;
        }
        let logits = scorer.pruned_scores(&ctx, active)?;
        let keys: Vec<u32> = logits.vocab.ids().iter().map(|t| t.0).collect();
        let picks = select::top_k_by_key(&logits.values, &keys, width);
        if picks.is_empty() {
            break;
        }
        let first = tree.nodes.len();
        for &(_, key) in &picks {
            tree.nodes.push(DraftNode {
                token: TokenId(key),
                parent,
                depth,
            });
        }
        parent = Some(first);
        ctx.push(tree.nodes[first].token);
    }
    Ok(tree)
}

/// Greedy verification: walk the tree from the root, accepting a child only
/// when it equals the target's argmax at that prefix; the argmax at the
/// first miss (or past the accepted path) becomes the bonus token.
pub fn verify(target: &Model, tree: &DraftTree) -> Result<VerifyResult> {
    Ok(verify_with_scores(target, tree)?.0)
}

fn verify_with_scores(target: &Model, tree: &DraftTree) -> Result<(VerifyResult, Vec<f64>)> {
    let mut ctx = tree.root_context.clone();
    let mut accepted = Vec::new();
    let mut parent: Option<usize> = None;
    loop {
        let z = target.full_scores(&ctx)?;
        let best = TokenId(select::argmax(&z).expect("nonempty vocabulary") as u32);
        let hit = tree
            .nodes
            .iter()
            .enumerate()
            .find(|(_, n)| n.parent == parent && n.token == best);
        match hit {
            Some((idx, _)) => {
                accepted.push(best);
                ctx.push(best);
                parent = Some(idx);
            }
            None => return Ok((VerifyResult { accepted, bonus: best }, z)),
        }
    }
}

/// Plain greedy decoding with the target model: the reference output that
/// speculative decoding must reproduce token for token.
pub fn ar_decode(
    target: &Model,
    prompt: &[TokenId],
    max_new: usize,
    eos: Option<TokenId>,
) -> Result<Vec<TokenId>> {
    if prompt.is_empty() {
        return Err(Error::EmptyPrompt);
    }
    let mut out = prompt.to_vec();
    for _ in 0..max_new {
        let z = target.full_scores(&out)?;
        let t = TokenId(select::argmax(&z).expect("nonempty vocabulary") as u32);
        out.push(t);
        if eos == Some(t) {
            break;
        }
    }
    Ok(out)
}

/// Per-round trace entry.
#[derive(Clone, Copy, Debug)]
pub struct RoundRecord {
    pub round: usize,
    /// |I| while drafting this round.
    pub active_size: usize,
    /// Head rows staged for this round by the per-round pipeline (0 when the
    /// buffer was reused unchanged; the prefill-time initial gather is not
    /// charged to any round).
    pub gathered: usize,
    /// Pruned scoring calls (tree depth); 0 for a draft-free round.
    pub levels: usize,
    /// Verifier-accepted draft tokens.
    pub accepted: usize,
    /// Tokens actually appended this round (≤ accepted + 1).
    pub emitted: usize,
    /// Emitted tokens that were inside this round's active set.
    pub covered_emitted: usize,
    /// Whether the round's final target-chosen token was in the active set.
    pub covered: bool,
    /// Active-set delta applied after this round.
    pub entered: usize,
    pub exited: usize,
    /// Candidates appended to the stream after this round.
    pub appended: usize,
}

/// Round-level export record (also the `steps` entries of a run report).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct StepRecord {
    pub round: usize,
    pub active_size: usize,
    pub accepted: usize,
    pub entered: usize,
    pub exited: usize,
    pub covered: bool,
}

/// Everything observable about one decode call.
#[derive(Clone, Debug)]
pub struct RunTrace {
    pub mode: PolicyMode,
    pub prompt_len: usize,
    pub rounds: Vec<RoundRecord>,
}

impl RunTrace {
    pub fn emitted(&self) -> usize {
        self.rounds.iter().map(|r| r.emitted).sum()
    }

    pub fn accepted(&self) -> usize {
        self.rounds.iter().map(|r| r.accepted).sum()
    }

    pub fn covered_emitted(&self) -> usize {
        self.rounds.iter().map(|r| r.covered_emitted).sum()
    }

    /// Mean accepted draft tokens per round (0 on an empty trace).
    pub fn alpha(&self) -> f64 {
        if self.rounds.is_empty() {
            0.0
        } else {
            self.accepted() as f64 / self.rounds.len() as f64
        }
    }

    pub fn step_records(&self) -> Vec<StepRecord> {
        self.rounds
            .iter()
            .map(|r| StepRecord {
                round: r.round,
                active_size: r.active_size,
                accepted: r.accepted,
                entered: r.entered,
                exited: r.exited,
                covered: r.covered,
            })
            .collect()
    }

    /// JSON lines, one object per round:
    /// `{"round":..,"active_size":..,"accepted":..,"entered":..,"exited":..,"covered":..}`.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for rec in self.step_records() {
            serde_json::to_writer(&mut w, &rec)?;
            writeln!(w)?;
        }
        Ok(())
    }

    /// CSV with header `step,appended_count,active_size,entered,exited`.
    pub fn write_stream_trace_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "step,appended_count,active_size,entered,exited")?;
        for r in &self.rounds {
            writeln!(
                w,
                "{},{},{},{},{}",
                r.round, r.appended, r.active_size, r.entered, r.exited
            )?;
        }
        Ok(())
    }
}

/// Speculative decode with the configured vocabulary policy. Returns the
/// full output (prompt included) and the per-round trace. The output is
/// identical to [`ar_decode`] on the target model for every policy.
pub fn decode(
    pair: &ModelPair,
    prompt: &[TokenId],
    max_new: usize,
    policy_cfg: &PolicyConfig,
    draft_cfg: &DraftConfig,
    freq: Option<&FrequencyTable>,
) -> Result<(Vec<TokenId>, RunTrace)> {
    let vocab_size = pair.vocab_size();
    if pair.draft.vocab_size() != vocab_size {
        return Err(Error::DimMismatch(format!(
            "draft vocabulary {} against target {}",
            pair.draft.vocab_size(),
            vocab_size
        )));
    }
    draft_cfg.validate()?;
    policy_cfg.validate(vocab_size)?;
    if prompt.is_empty() {
        return Err(Error::EmptyPrompt);
    }
    if let Some(&t) = prompt.iter().find(|t| t.index() >= vocab_size) {
        return Err(Error::Corpus(format!(
            "prompt token {t} outside vocabulary of size {vocab_size}"
        )));
    }

    // Prompt-seeded modes need the target's scores at every prompt prefix.
    let prefill: Option<Vec<Vec<f64>>> =
        if matches!(policy_cfg.mode, PolicyMode::Dynamic | PolicyMode::CtxOnly) {
            Some(
                (1..=prompt.len())
                    .map(|i| pair.target.full_scores(&prompt[..i]))
                    .collect::<Result<_>>()?,
            )
        } else {
            None
        };

    let mut policy = PolicyState::init(policy_cfg, vocab_size, prompt, prefill.as_deref(), freq)?;
    let mut active: ActiveVocab = Arc::new(policy.active());
    let capacity = policy_cfg.window.max(active.len());
    let mut scorer = DraftScorer::new(&pair.draft, capacity, draft_cfg.gather);
    // Initial gather: part of prefill, overlapping nothing we account for.
    scorer.stage(&active)?;

    let mut out = prompt.to_vec();
    let mut rounds: Vec<RoundRecord> = Vec::new();
    let mut emitted_total = 0usize;
    let mut gathered_for_round = 0usize;
    let mut finished = false;

    while emitted_total < max_new && !finished {
        let mut accepted_len = 0usize;
        let mut emitted = 0usize;
        let mut covered_emitted = 0usize;
        let levels;
        let covered;
        let verify_scores;
        let tree_tokens;

        if active.is_empty() {
            // Degenerate round: nothing draftable, emit one target token.
            let z = pair.target.full_scores(&out)?;
            let t = TokenId(select::argmax(&z).expect("nonempty vocabulary") as u32);
            covered = active.contains(t);
            out.push(t);
            emitted_total += 1;
            emitted = 1;
            if covered {
                covered_emitted += 1;
            }
            if pair.eos == Some(t) {
                finished = true;
            }
            levels = 0;
            verify_scores = z;
            tree_tokens = Vec::new();
        } else {
            let tree = draft_round(&mut scorer, &out, &active, draft_cfg)?;
            debug_assert!(tree.nodes.iter().all(|n| active.contains(n.token)));
            levels = tree.depth();
            tree_tokens = tree.tokens_first_occurrence();
            let (vr, z) = verify_with_scores(&pair.target, &tree)?;
            verify_scores = z;
            accepted_len = vr.accepted.len();
            for &t in &vr.accepted {
                if emitted_total == max_new || finished {
                    break;
                }
                out.push(t);
                emitted_total += 1;
                emitted += 1;
                covered_emitted += 1; // accepted tokens come from the active set
                if pair.eos == Some(t) {
                    finished = true;
                }
            }
            covered = active.contains(vr.bonus);
            if emitted_total < max_new && !finished {
                out.push(vr.bonus);
                emitted_total += 1;
                emitted += 1;
                if covered {
                    covered_emitted += 1;
                }
                if pair.eos == Some(vr.bonus) {
                    finished = true;
                }
            }
        }

        let verify_top: Vec<TokenId> = select::top_k(&verify_scores, policy_cfg.k_ver)
            .into_iter()
            .map(|i| TokenId(i as u32))
            .collect();
        let batch = UpdateBatch {
            draft_candidates: tree_tokens,
            verify_candidates: verify_top,
        };
        let appended = batch.len();
        let next: ActiveVocab = Arc::new(policy.step(&batch)?);
        let (entered, exited) = delta_since(&active, &next);

        // Stage the next round's rows; the copy overlaps its first backbone
        // call. Fixed policies keep their initial buffer for the whole run.
        let next_gather = if policy_cfg.mode.is_windowed() {
            let rows = GatherPipeline::planned_rows(draft_cfg.gather, Some(active.as_ref()), next.as_ref());
            scorer.stage(&next)?;
            rows
        } else {
            0
        };

        rounds.push(RoundRecord {
            round: rounds.len(),
            active_size: active.len(),
            gathered: gathered_for_round,
            levels,
            accepted: accepted_len,
            emitted,
            covered_emitted,
            covered,
            entered: entered.len(),
            exited: exited.len(),
            appended,
        });
        gathered_for_round = next_gather;
        active = next;
    }

    let trace = RunTrace {
        mode: policy_cfg.mode,
        prompt_len: prompt.len(),
        rounds,
    };
    Ok((out, trace))
}
