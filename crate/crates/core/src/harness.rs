//! Benchmark orchestration: prepare a workbench from a corpus, run the
//! policy modes over seeded prompt spans, and write reports.
//!
//! Every run is checked against plain autoregressive decoding before its
//! numbers are reported — a mismatch aborts the command, because all speed
//! and coverage figures are only meaningful for lossless runs.

use std::collections::HashSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize_corpus, FrequencyTable, Scheme, TokenId, Tokenizer};
use crate::engine::{ar_decode, decode, DraftConfig, RunTrace};
use crate::error::{Error, Result};
use crate::gather::{buffer_sizing, GatherMode};
use crate::metrics::{
    acceptance_stats, coverage, simulate_run, vocab_evolution, write_evolution_csv,
    LatencyParams, OverlapMode, RunReport,
};
use crate::models::ModelPair;
use crate::policy::{PolicyConfig, PolicyMode};

/// Which toy model family drives a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelFamily {
    Count,
    Linear,
}

impl ModelFamily {
    pub fn parse(s: &str) -> Result<ModelFamily> {
        match s {
            "count" => Ok(ModelFamily::Count),
            "linear" => Ok(ModelFamily::Linear),
            other => Err(Error::InvalidConfig(format!(
                "unknown model family '{other}' (expected count or linear)"
            ))),
        }
    }
}

/// Full description of one experiment.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scheme: Scheme,
    pub family: ModelFamily,
    pub seed: u64,
    /// Policy modes benchmarked by `cmd_bench`, in report order.
    pub modes: Vec<PolicyMode>,
    pub k_static: usize,
    pub k_pre: usize,
    pub k_ver: usize,
    pub window: usize,
    pub depth: usize,
    pub width: usize,
    pub max_draft_tokens: usize,
    pub batch: usize,
    pub gather: GatherMode,
    pub overlap: OverlapMode,
    /// Hidden dimension of the linear family.
    pub dim: usize,
    pub prompts: usize,
    pub prompt_len: usize,
    pub max_new: usize,
    pub latency: LatencyParams,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scheme: Scheme::Word,
            family: ModelFamily::Count,
            seed: 17,
            modes: PolicyMode::ALL.to_vec(),
            k_static: 256,
            k_pre: 3,
            k_ver: 3,
            window: 3072,
            depth: 5,
            width: 1,
            max_draft_tokens: 60,
            batch: 1,
            gather: GatherMode::Full,
            overlap: OverlapMode::Async,
            dim: 32,
            prompts: 8,
            prompt_len: 32,
            max_new: 64,
            latency: LatencyParams::default(),
        }
    }
}

impl ExperimentConfig {
    /// Structural checks; vocabulary-dependent limits are enforced when a
    /// run starts.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("prompts", self.prompts),
            ("prompt_len", self.prompt_len),
            ("max_new", self.max_new),
            ("dim", self.dim),
            ("k_static", self.k_static),
            ("window", self.window),
        ] {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be >= 1")));
            }
        }
        if self.modes.is_empty() {
            return Err(Error::InvalidConfig("modes must not be empty".into()));
        }
        self.draft_config().validate()?;
        self.latency.validate()?;
        Ok(())
    }

    pub fn draft_config(&self) -> DraftConfig {
        DraftConfig {
            depth: self.depth,
            width: self.width,
            max_draft_tokens: self.max_draft_tokens,
            batch: self.batch,
            gather: self.gather,
        }
    }

    pub fn policy_config(&self, mode: PolicyMode, eos: Option<TokenId>) -> PolicyConfig {
        let mut specials = vec![TokenId::UNK];
        if let Some(t) = eos {
            if t != TokenId::UNK {
                specials.push(t);
            }
        }
        PolicyConfig {
            mode,
            k_static: self.k_static,
            k_pre: self.k_pre,
            k_ver: self.k_ver,
            window: self.window,
            specials,
        }
    }
}

/// Prepared inputs shared by every mode of an experiment: tokenized corpus,
/// frequency table, trained model pair, and the seeded prompt spans.
pub struct Workbench {
    pub tokenizer: Tokenizer,
    pub docs_tokens: Vec<Vec<TokenId>>,
    pub freq: FrequencyTable,
    pub pair: ModelPair,
    pub prompts: Vec<Vec<TokenId>>,
}

impl Workbench {
    pub fn prepare(cfg: &ExperimentConfig, corpus_text: &str) -> Result<Workbench> {
        cfg.validate()?;
        let docs: Vec<String> = corpus_text.lines().map(String::from).collect();
        if docs.is_empty() {
            return Err(Error::Corpus("corpus has no documents".into()));
        }
        let mut tokenizer = Tokenizer::for_scheme(cfg.scheme);
        let docs_tokens = tokenize_corpus(&mut tokenizer, &docs);
        let vocab_size = tokenizer.vocab_size();
        let freq = FrequencyTable::build(docs_tokens.iter().flatten().copied(), vocab_size)?;
        let pair = match cfg.family {
            ModelFamily::Count => ModelPair::count_family(&docs_tokens, vocab_size),
            ModelFamily::Linear => ModelPair::linear_family(vocab_size, cfg.dim, cfg.seed as u32)?,
        };
        let prompts = sample_prompts(&docs_tokens, cfg.prompts, cfg.prompt_len, cfg.seed)?;
        Ok(Workbench {
            tokenizer,
            docs_tokens,
            freq,
            pair,
            prompts,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.tokenizer.vocab_size()
    }

    /// Reference continuations for every prompt.
    pub fn ar_references(&self, cfg: &ExperimentConfig) -> Result<Vec<Vec<TokenId>>> {
        self.prompts
            .iter()
            .map(|p| ar_decode(&self.pair.target, p, cfg.max_new, self.pair.eos))
            .collect()
    }
}

/// Prompt spans drawn from documents long enough to hold one.
fn sample_prompts(
    docs: &[Vec<TokenId>],
    n: usize,
    len: usize,
    seed: u64,
) -> Result<Vec<Vec<TokenId>>> {
    let eligible: Vec<&Vec<TokenId>> = docs.iter().filter(|d| d.len() >= len).collect();
    if eligible.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "prompt_len {len} exceeds every document"
        )));
    }
    // Offset keeps prompt sampling independent of model-weight seeding.
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    Ok((0..n)
        .map(|_| {
            let d = eligible[rng.gen_range(0..eligible.len())];
            let start = rng.gen_range(0..=d.len() - len);
            d[start..start + len].to_vec()
        })
        .collect())
}

/// Decode every prompt under one policy mode, verifying losslessness
/// against the given references.
pub fn run_mode(
    bench: &Workbench,
    cfg: &ExperimentConfig,
    mode: PolicyMode,
    references: &[Vec<TokenId>],
) -> Result<Vec<RunTrace>> {
    let policy = cfg.policy_config(mode, bench.pair.eos);
    let draft = cfg.draft_config();
    let mut traces = Vec::with_capacity(bench.prompts.len());
    for (prompt, want) in bench.prompts.iter().zip(references) {
        let (out, trace) = decode(
            &bench.pair,
            prompt,
            cfg.max_new,
            &policy,
            &draft,
            Some(&bench.freq),
        )?;
        if &out != want {
            return Err(Error::DecodeMismatch);
        }
        traces.push(trace);
    }
    Ok(traces)
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path)?))
}

/// One `comparison.csv` row.
#[derive(Clone, Debug, Serialize)]
pub struct ComparisonRow {
    pub mode: String,
    pub alpha: f64,
    pub coverage: f64,
    pub sim_speed: f64,
}

pub struct BenchSummary {
    pub vocab_size: usize,
    pub corpus_tokens: usize,
    pub rows: Vec<ComparisonRow>,
}

/// Run every configured mode and write, under `out_dir`: `freq.csv`,
/// per-mode `report_<mode>.json`, `trace_<mode>.jsonl`,
/// `evolution_<mode>.csv`, `stream_trace_<mode>.csv`, and `comparison.csv`.
pub fn cmd_bench(
    cfg: &ExperimentConfig,
    corpus_text: &str,
    out_dir: &Path,
) -> Result<BenchSummary> {
    let bench = Workbench::prepare(cfg, corpus_text)?;
    let references = bench.ar_references(cfg)?;
    fs::create_dir_all(out_dir)?;

    let mut w = create(&out_dir.join("freq.csv"))?;
    bench.freq.write_csv(&mut w)?;
    w.flush()?;

    let mut rows = Vec::with_capacity(cfg.modes.len());
    for &mode in &cfg.modes {
        let traces = run_mode(&bench, cfg, mode, &references)?;
        let stats = acceptance_stats(&traces)?;
        let cov = coverage(&traces)?;
        let mut tokens = 0usize;
        let mut total_ms = 0.0;
        for t in &traces {
            let timing = simulate_run(t, &cfg.latency, cfg.overlap);
            tokens += timing.tokens;
            total_ms += timing.total_ms;
        }
        let sim_speed = tokens as f64 / total_ms;

        let steps = traces.iter().flat_map(|t| t.step_records()).collect();
        let report = RunReport {
            mode: mode.name().to_string(),
            alpha: stats.alpha,
            coverage: cov,
            sim_speed_tok_per_ms: sim_speed,
            steps,
        };
        let mut w = create(&out_dir.join(format!("report_{}.json", mode.name())))?;
        serde_json::to_writer_pretty(&mut w, &report)?;
        writeln!(w)?;
        w.flush()?;

        let mut w = create(&out_dir.join(format!("trace_{}.jsonl", mode.name())))?;
        for t in &traces {
            t.write_jsonl(&mut w)?;
        }
        w.flush()?;

        let mut w = create(&out_dir.join(format!("evolution_{}.csv", mode.name())))?;
        write_evolution_csv(&vocab_evolution(&traces), &mut w)?;
        w.flush()?;

        // Stream trace for the first prompt: a single-run view of the
        // candidate stream's churn.
        let mut w = create(&out_dir.join(format!("stream_trace_{}.csv", mode.name())))?;
        traces[0].write_stream_trace_csv(&mut w)?;
        w.flush()?;

        rows.push(ComparisonRow {
            mode: mode.name().to_string(),
            alpha: stats.alpha,
            coverage: cov,
            sim_speed,
        });
    }

    let mut w = create(&out_dir.join("comparison.csv"))?;
    writeln!(w, "mode,alpha,coverage,sim_speed")?;
    for r in &rows {
        writeln!(
            w,
            "{},{:.6},{:.6},{:.6}",
            r.mode, r.alpha, r.coverage, r.sim_speed
        )?;
    }
    w.flush()?;

    Ok(BenchSummary {
        vocab_size: bench.vocab_size(),
        corpus_tokens: bench.docs_tokens.iter().map(|d| d.len()).sum(),
        rows,
    })
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct SweepRow {
    pub wmax: usize,
    pub alpha: f64,
    pub coverage: f64,
    pub sim_speed: f64,
}

/// Sweep the recency window of the dynamic policy. Writes CSV with header
/// `wmax,alpha,coverage,sim_speed` to `out`.
pub fn cmd_sweep_wmax<W: Write>(
    cfg: &ExperimentConfig,
    corpus_text: &str,
    windows: &[usize],
    mut out: W,
) -> Result<Vec<SweepRow>> {
    if windows.is_empty() {
        return Err(Error::InvalidConfig("empty window sweep".into()));
    }
    let bench = Workbench::prepare(cfg, corpus_text)?;
    let references = bench.ar_references(cfg)?;
    let mut rows = Vec::with_capacity(windows.len());
    for &wmax in windows {
        let mut swept = cfg.clone();
        swept.window = wmax;
        swept.validate()?;
        let traces = run_mode(&bench, &swept, PolicyMode::Dynamic, &references)?;
        let stats = acceptance_stats(&traces)?;
        let cov = coverage(&traces)?;
        let mut tokens = 0usize;
        let mut total_ms = 0.0;
        for t in &traces {
            let timing = simulate_run(t, &swept.latency, swept.overlap);
            tokens += timing.tokens;
            total_ms += timing.total_ms;
        }
        rows.push(SweepRow {
            wmax,
            alpha: stats.alpha,
            coverage: cov,
            sim_speed: tokens as f64 / total_ms,
        });
    }
    writeln!(out, "wmax,alpha,coverage,sim_speed")?;
    for r in &rows {
        writeln!(
            out,
            "{},{:.6},{:.6},{:.6}",
            r.wmax, r.alpha, r.coverage, r.sim_speed
        )?;
    }
    Ok(rows)
}

#[derive(Clone, Debug, Serialize)]
pub struct AblateRow {
    pub mode: String,
    pub alpha: f64,
    pub coverage: f64,
}

/// Compare the two stream sources against their combination. Writes CSV
/// with header `mode,alpha,coverage` to `out`.
pub fn cmd_ablate<W: Write>(
    cfg: &ExperimentConfig,
    corpus_text: &str,
    mut out: W,
) -> Result<Vec<AblateRow>> {
    let bench = Workbench::prepare(cfg, corpus_text)?;
    let references = bench.ar_references(cfg)?;
    let mut rows = Vec::new();
    for mode in [PolicyMode::CtxOnly, PolicyMode::ExtOnly, PolicyMode::Dynamic] {
        let traces = run_mode(&bench, cfg, mode, &references)?;
        rows.push(AblateRow {
            mode: mode.name().to_string(),
            alpha: acceptance_stats(&traces)?.alpha,
            coverage: coverage(&traces)?,
        });
    }
    writeln!(out, "mode,alpha,coverage")?;
    for r in &rows {
        writeln!(out, "{},{:.6},{:.6}", r.mode, r.alpha, r.coverage)?;
    }
    Ok(rows)
}

#[derive(Clone, Debug, Serialize)]
pub struct CoverageRow {
    pub policy: String,
    pub size: usize,
    pub coverage: f64,
}

/// Coverage as a function of vocabulary budget, for a frequency-ranked
/// static set versus the dynamic window. Static coverage is computed by
/// direct membership of the reference continuations in the top-`size` set
/// (run-independent, since outputs are policy-invariant); dynamic coverage
/// comes from traced runs at window `size`. Writes CSV with header
/// `policy,size,coverage` to `out`.
pub fn cmd_coverage<W: Write>(
    cfg: &ExperimentConfig,
    corpus_text: &str,
    sizes: &[usize],
    mut out: W,
) -> Result<Vec<CoverageRow>> {
    if sizes.is_empty() {
        return Err(Error::InvalidConfig("empty size list".into()));
    }
    let bench = Workbench::prepare(cfg, corpus_text)?;
    let references = bench.ar_references(cfg)?;
    let mut rows = Vec::new();

    let emitted: Vec<TokenId> = references
        .iter()
        .zip(&bench.prompts)
        .flat_map(|(r, p)| r[p.len()..].iter().copied())
        .collect();
    if emitted.is_empty() {
        return Err(Error::EmptyRun);
    }
    for &size in sizes {
        let top: HashSet<TokenId> = bench.freq.top_k(size).iter().copied().collect();
        let covered = emitted.iter().filter(|t| top.contains(t)).count();
        rows.push(CoverageRow {
            policy: "static".to_string(),
            size,
            coverage: covered as f64 / emitted.len() as f64,
        });
    }
    for &size in sizes {
        let mut swept = cfg.clone();
        swept.window = size;
        swept.validate()?;
        let traces = run_mode(&bench, &swept, PolicyMode::Dynamic, &references)?;
        rows.push(CoverageRow {
            policy: "dynamic".to_string(),
            size,
            coverage: coverage(&traces)?,
        });
    }

    writeln!(out, "policy,size,coverage")?;
    for r in &rows {
        writeln!(out, "{},{},{:.6}", r.policy, r.size, r.coverage)?;
    }
    Ok(rows)
}

/// Buffer-footprint arithmetic as JSON, for the given geometry.
pub fn cmd_sizing<W: Write>(
    vocab_size: usize,
    window: usize,
    dim: usize,
    bytes_per_element: usize,
    mut out: W,
) -> Result<()> {
    let sizing = buffer_sizing(
        vocab_size as u64,
        dim as u64,
        window as u64,
        bytes_per_element as u64,
    );
    serde_json::to_writer_pretty(&mut out, &sizing)?;
    writeln!(out)?;
    Ok(())
}

/// Mean emitted-token count per round over a set of traces; the headline
/// throughput proxy (`alpha + 1` when no round hits the budget or EOS).
pub fn tokens_per_round(traces: &[RunTrace]) -> Result<f64> {
    let stats = acceptance_stats(traces)?;
    Ok(stats.emitted as f64 / stats.rounds as f64)
}
