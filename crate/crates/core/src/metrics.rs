//! Analytical latency model and run-level statistics.
//!
//! Wall-clock is never measured: step times come from a small affine cost
//! model (head and gather costs scale with rows moved or scored, backbone
//! and verify costs are flat), so simulated speeds are exactly reproducible.
//! The draft head cost is what vocabulary pruning shrinks; the gather cost
//! is what staging the pruned rows adds back — either overlapped with the
//! backbone (async) or serialized in front of it (sync).

use std::io::Write;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::engine::{RunTrace, StepRecord};
use crate::error::{Error, Result};

/// Cost-model coefficients, all in milliseconds (per-unit terms in
/// ms per element).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LatencyParams {
    /// Head cost: `c0 + c1 * rows * dim * batch`.
    pub c0: f64,
    pub c1: f64,
    /// Gather cost for n > 0 staged rows: `g0 + g1 * n * dim`. Zero rows
    /// cost nothing.
    pub g0: f64,
    pub g1: f64,
    /// One draft backbone call.
    pub backbone_ms: f64,
    /// One target verification pass over a round's tree.
    pub verify_ms: f64,
    /// Hidden dimension entering the head and gather terms.
    pub dim: usize,
    /// Draft tokens scored per head call.
    pub batch: usize,
}

impl Default for LatencyParams {
    fn default() -> Self {
        LatencyParams {
            c0: 0.05,
            c1: 1e-8,
            g0: 0.02,
            g1: 1e-9,
            backbone_ms: 1.0,
            verify_ms: 1.4,
            dim: 4096,
            batch: 1,
        }
    }
}

impl LatencyParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("c0", self.c0),
            ("c1", self.c1),
            ("g0", self.g0),
            ("g1", self.g1),
            ("backbone_ms", self.backbone_ms),
            ("verify_ms", self.verify_ms),
        ];
        for (name, v) in fields {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "latency parameter {name} must be finite and >= 0"
                )));
            }
        }
        if self.dim == 0 || self.batch == 0 {
            return Err(Error::InvalidConfig(
                "latency dim and batch must be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Draft-head time for one call over `rows` vocabulary rows.
    pub fn head_time(&self, rows: usize) -> f64 {
        self.c0 + self.c1 * rows as f64 * self.dim as f64 * self.batch as f64
    }

    /// Time to stage `rows` head rows into the repack buffer.
    pub fn gather_time(&self, rows: usize) -> f64 {
        if rows == 0 {
            0.0
        } else {
            self.g0 + self.g1 * rows as f64 * self.dim as f64
        }
    }
}

/// Whether the gather is serialized before the first draft level or
/// overlapped with its backbone call.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OverlapMode {
    Sync,
    Async,
}

impl OverlapMode {
    pub fn parse(s: &str) -> Result<OverlapMode> {
        match s {
            "sync" => Ok(OverlapMode::Sync),
            "async" => Ok(OverlapMode::Async),
            other => Err(Error::InvalidConfig(format!(
                "unknown overlap mode '{other}' (expected sync or async)"
            ))),
        }
    }
}

/// Simulated timing of one round's draft phase.
#[derive(Clone, Debug)]
pub struct DraftStepTiming {
    /// One entry per tree level.
    pub per_level: Vec<f64>,
    pub total_ms: f64,
}

/// Simulate one draft phase: the gather lands on the first level —
/// added in front of it (sync) or overlapped with its backbone (async) —
/// and every level pays one backbone call plus one pruned-head call over
/// `active_size` rows. A level-free (degenerate) round drafts for 0 ms.
pub fn simulate_draft_step(
    params: &LatencyParams,
    active_size: usize,
    gathered_rows: usize,
    levels: usize,
    overlap: OverlapMode,
) -> DraftStepTiming {
    let mut per_level = Vec::with_capacity(levels);
    let head = params.head_time(active_size);
    let gather = params.gather_time(gathered_rows);
    for level in 0..levels {
        let t = if level == 0 {
            match overlap {
                OverlapMode::Sync => gather + params.backbone_ms + head,
                OverlapMode::Async => gather.max(params.backbone_ms) + head,
            }
        } else {
            params.backbone_ms + head
        };
        per_level.push(t);
    }
    DraftStepTiming {
        total_ms: per_level.iter().sum(),
        per_level,
    }
}

/// Exact decode-speed arithmetic: tokens per verify cycle over the cycle's
/// cost, kept rational so orderings are never blurred by rounding.
pub fn oracle_speed(
    tokens_per_cycle: Ratio<i64>,
    t_verify: Ratio<i64>,
    t_draft: Ratio<i64>,
) -> Result<Ratio<i64>> {
    let denom = t_verify + t_draft;
    if denom <= Ratio::from_integer(0) {
        return Err(Error::InvalidConfig(
            "verify + draft time must be positive".into(),
        ));
    }
    Ok(tokens_per_cycle / denom)
}

/// Simulated wall time of a traced run.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct RunTiming {
    pub total_ms: f64,
    pub tokens: usize,
    pub tok_per_ms: f64,
}

/// Replay a trace through the cost model: every round pays its draft phase
/// plus one verify pass.
pub fn simulate_run(trace: &RunTrace, params: &LatencyParams, overlap: OverlapMode) -> RunTiming {
    let mut total = 0.0;
    for r in &trace.rounds {
        let draft = simulate_draft_step(params, r.active_size, r.gathered, r.levels, overlap);
        total += draft.total_ms + params.verify_ms;
    }
    let tokens = trace.emitted();
    RunTiming {
        total_ms: total,
        tokens,
        tok_per_ms: if total > 0.0 { tokens as f64 / total } else { 0.0 },
    }
}

/// Pooled acceptance statistics over one or more runs.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct AcceptanceStats {
    pub rounds: usize,
    pub accepted: usize,
    pub emitted: usize,
    /// Mean accepted draft tokens per round.
    pub alpha: f64,
}

pub fn acceptance_stats(traces: &[RunTrace]) -> Result<AcceptanceStats> {
    let rounds: usize = traces.iter().map(|t| t.rounds.len()).sum();
    if rounds == 0 {
        return Err(Error::EmptyRun);
    }
    let accepted: usize = traces.iter().map(|t| t.accepted()).sum();
    let emitted: usize = traces.iter().map(|t| t.emitted()).sum();
    Ok(AcceptanceStats {
        rounds,
        accepted,
        emitted,
        alpha: accepted as f64 / rounds as f64,
    })
}

/// Fraction of emitted tokens that were inside the active set when emitted,
/// pooled over the given runs.
pub fn coverage(traces: &[RunTrace]) -> Result<f64> {
    let emitted: usize = traces.iter().map(|t| t.emitted()).sum();
    if emitted == 0 {
        return Err(Error::EmptyRun);
    }
    let covered: usize = traces.iter().map(|t| t.covered_emitted()).sum();
    Ok(covered as f64 / emitted as f64)
}

/// Active-set size statistics per round index, pooled across runs, with the
/// coverage accumulated over all rounds up to and including that index.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct EvolutionRow {
    pub step: usize,
    pub mean_size: f64,
    pub min_size: usize,
    pub max_size: usize,
    pub cum_coverage: f64,
}

pub fn vocab_evolution(traces: &[RunTrace]) -> Vec<EvolutionRow> {
    let depth = traces.iter().map(|t| t.rounds.len()).max().unwrap_or(0);
    let mut rows = Vec::with_capacity(depth);
    let mut covered = 0usize;
    let mut emitted = 0usize;
    for step in 0..depth {
        let sizes: Vec<usize> = traces
            .iter()
            .filter_map(|t| t.rounds.get(step))
            .map(|r| r.active_size)
            .collect();
        for t in traces {
            if let Some(r) = t.rounds.get(step) {
                covered += r.covered_emitted;
                emitted += r.emitted;
            }
        }
        rows.push(EvolutionRow {
            step,
            mean_size: sizes.iter().sum::<usize>() as f64 / sizes.len() as f64,
            min_size: *sizes.iter().min().expect("step has at least one run"),
            max_size: *sizes.iter().max().expect("step has at least one run"),
            cum_coverage: if emitted == 0 {
                0.0
            } else {
                covered as f64 / emitted as f64
            },
        });
    }
    rows
}

/// CSV with header `step,mean_size,min_size,max_size,cum_coverage`.
pub fn write_evolution_csv<W: Write>(rows: &[EvolutionRow], mut w: W) -> Result<()> {
    writeln!(w, "step,mean_size,min_size,max_size,cum_coverage")?;
    for r in rows {
        writeln!(
            w,
            "{},{:.4},{},{},{:.6}",
            r.step, r.mean_size, r.min_size, r.max_size, r.cum_coverage
        )?;
    }
    Ok(())
}

/// Per-policy summary written by the benchmark harness.
#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub mode: String,
    pub alpha: f64,
    pub coverage: f64,
    pub sim_speed_tok_per_ms: f64,
    pub steps: Vec<StepRecord>,
}
