//! Acceptance suite: one test per acceptance criterion, each printing a
//! PASS line (visible with `--nocapture`) after its assertions hold.
//!
//! Run with: `cargo test --test acceptance`

use std::collections::{BTreeMap, HashSet};
use std::time::{Duration, Instant};

use num_rational::Ratio;
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use specprune::corpus::TokenId;
use specprune::error::Error;
use specprune::gather::{buffer_sizing, GatherMode, GatherPipeline, RepackBuffer};
use specprune::harness::{cmd_bench, run_mode, ExperimentConfig, ModelFamily, Workbench};
use specprune::metrics::{
    acceptance_stats, coverage, oracle_speed, simulate_draft_step, LatencyParams, OverlapMode,
};
use specprune::models::LMHead;
use specprune::policy::PolicyMode;
use specprune::stream::{ActiveVocabulary, CandidateStream, UpdateBatch};
use specprune::synth::{self, SynthConfig};

fn pass(n: usize, what: &str) {
    println!("PASS criterion {n:>2}: {what}");
}

fn benchmark_corpus() -> String {
    synth::generate(&SynthConfig::default()).unwrap()
}

// --------------------------------------------------------------------------
// 1. Lossless decoding: 100 prompts, all five policy modes, exact equality
//    with autoregressive decoding, within the time budget.
// --------------------------------------------------------------------------
#[test]
fn criterion_01_lossless_decoding_across_all_modes() {
    let start = Instant::now();
    let cfg = ExperimentConfig {
        prompts: 100,
        prompt_len: 24,
        max_new: 48,
        window: 96,
        k_static: 128,
        ..ExperimentConfig::default()
    };
    let corpus = benchmark_corpus();
    let bench = Workbench::prepare(&cfg, &corpus).unwrap();
    let references = bench.ar_references(&cfg).unwrap();
    for mode in PolicyMode::ALL {
        // run_mode compares every decode against its reference and fails
        // the run on any mismatch.
        let traces = run_mode(&bench, &cfg, mode, &references).unwrap();
        assert_eq!(traces.len(), 100);
    }
    let elapsed = start.elapsed();
    assert!(
        elapsed < Duration::from_secs(60),
        "lossless sweep took {elapsed:?}"
    );
    pass(1, "500 decodes match the autoregressive reference exactly");
}

// --------------------------------------------------------------------------
// 2. Windowed candidate stream: 10^4 appends per window against a
//    from-scratch suffix-dedup oracle.
// --------------------------------------------------------------------------
#[test]
fn criterion_02_window_oracle_ten_thousand_pushes() {
    let vocab = 256usize;
    for &window in &[1usize, 4, 16, 64] {
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + window as u64);
        let mut stream = CandidateStream::new(vocab, window);
        let mut log: Vec<TokenId> = Vec::new();
        let mut pushed = 0usize;
        while pushed < 10_000 {
            let n = rng.gen_range(1..4).min(10_000 - pushed);
            let tokens: Vec<TokenId> = (0..n)
                .map(|_| TokenId(rng.gen_range(0..vocab) as u32))
                .collect();
            log.extend(tokens.iter().copied());
            pushed += n;
            stream
                .push_update(&UpdateBatch {
                    draft_candidates: tokens,
                    verify_candidates: vec![],
                })
                .unwrap();

            let start = log.len().saturating_sub(window);
            let mut seen = HashSet::new();
            let mut want = Vec::new();
            for &t in &log[start..] {
                if seen.insert(t) {
                    want.push(t);
                }
            }
            assert_eq!(stream.active_set().ids(), want.as_slice(), "window {window}");
        }
    }
    pass(2, "stream active set equals the suffix-dedup oracle for 4x10^4 pushes");
}

// --------------------------------------------------------------------------
// 3. Pruned head: 10^3 random (head, subset, hidden) triples; gathered-row
//    logits are bit-exact against the full head.
// --------------------------------------------------------------------------
#[test]
fn criterion_03_pruned_head_is_bit_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..1000 {
        let v = rng.gen_range(4..64);
        let d = rng.gen_range(2..24);
        let weights: Vec<f64> = (0..v * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let head = LMHead::new(weights, v, d).unwrap();
        let h: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let mut pool: Vec<TokenId> = (0..v as u32).map(TokenId).collect();
        pool.shuffle(&mut rng);
        let subset: Vec<TokenId> = pool[..rng.gen_range(1..=v)].to_vec();
        let vocab = ActiveVocabulary::new(subset.clone());

        let pipeline = GatherPipeline::new();
        let mut buffer = RepackBuffer::new(subset.len(), d);
        pipeline
            .schedule_with(&head, vocab, &mut buffer, GatherMode::Full, None)
            .unwrap();
        buffer.wait().unwrap();
        let pruned = buffer.pruned_logits(&h).unwrap();

        let full = head.full_logits(&h).unwrap();
        for (j, &t) in pruned.vocab.ids().iter().enumerate() {
            assert_eq!(
                pruned.values[j],
                full[t.index()],
                "case {case}: row {j} (token {t})"
            );
        }
    }
    pass(3, "10^3 pruned-head reads match full-head logits bit for bit");
}

// --------------------------------------------------------------------------
// 4. Gather pipeline contract: 10^3 scheduled gathers with injected delays;
//    premature reads fail, awaited reads are exact, double-schedules fail.
// --------------------------------------------------------------------------
#[test]
fn criterion_04_gather_event_contract_under_delay() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let v = 32usize;
    let d = 6usize;
    let weights: Vec<f64> = (0..v * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let head = LMHead::new(weights, v, d).unwrap();
    let pipeline = GatherPipeline::new();
    let mut buffer = RepackBuffer::new(v, d);

    for round in 0..1000 {
        let mut pool: Vec<TokenId> = (0..v as u32).map(TokenId).collect();
        pool.shuffle(&mut rng);
        let subset: Vec<TokenId> = pool[..rng.gen_range(1..=v)].to_vec();
        let vocab = ActiveVocabulary::new(subset);
        let h: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();

        // Every tenth round gets a delay long enough to observe in-flight
        // state deterministically.
        let slow = round % 10 == 0;
        let delay = if slow {
            Some(Duration::from_millis(5))
        } else {
            None
        };
        pipeline
            .schedule_with(&head, vocab.clone(), &mut buffer, GatherMode::Full, delay)
            .unwrap();

        if slow {
            // Reading ahead of the signal is a contract violation.
            assert!(matches!(
                buffer.pruned_logits(&h),
                Err(Error::GatherIncomplete)
            ));
            // So is scheduling on a buffer that is still in flight.
            assert!(matches!(
                pipeline.schedule_with(&head, vocab.clone(), &mut buffer, GatherMode::Full, None),
                Err(Error::GatherInFlight)
            ));
        }

        buffer.wait().unwrap();
        let pruned = buffer.pruned_logits(&h).unwrap();
        let full = head.full_logits(&h).unwrap();
        for (j, &t) in pruned.vocab.ids().iter().enumerate() {
            assert_eq!(pruned.values[j], full[t.index()], "round {round}");
        }
    }
    pass(4, "10^3 gathered rounds respect the wait-before-read contract");
}

// --------------------------------------------------------------------------
// 5. Latency model: the pinned per-step times reproduce exactly.
// --------------------------------------------------------------------------
#[test]
fn criterion_05_pinned_step_times() {
    let pruned = LatencyParams {
        c0: 0.237,
        c1: 0.0,
        g0: 1.403,
        g1: 0.0,
        backbone_ms: 0.003,
        ..LatencyParams::default()
    };
    let async_step = simulate_draft_step(&pruned, 3072, 3072, 1, OverlapMode::Async);
    assert!((async_step.total_ms - 1.640).abs() <= 1e-9);
    let sync_step = simulate_draft_step(&pruned, 3072, 3072, 1, OverlapMode::Sync);
    assert!((sync_step.total_ms - 1.643).abs() <= 1e-9);

    let full = LatencyParams {
        c0: 2.330,
        c1: 0.0,
        g0: 0.7,
        g1: 0.0,
        backbone_ms: 1.405,
        ..LatencyParams::default()
    };
    for overlap in [OverlapMode::Sync, OverlapMode::Async] {
        let step = simulate_draft_step(&full, 128_256, 0, 1, overlap);
        assert!((step.total_ms - 3.735).abs() <= 1e-9);
    }
    pass(5, "pinned step times 1.640 ms (pruned async) and 3.735 ms (full) reproduce");
}

// --------------------------------------------------------------------------
// 6. Buffer sizing: exact byte counts for the pinned geometry and for
//    independently recomputed ones.
// --------------------------------------------------------------------------
#[test]
fn criterion_06_buffer_sizing_bytes_exact() {
    let s = buffer_sizing(128_256, 4096, 3072, 2);
    assert_eq!(s.token_ids_bytes, 16_032);
    assert_eq!(s.tokens_tensor_bytes, 12_288);
    assert_eq!(s.repack_buf_bytes, 25_165_824);
    assert_eq!(s.total_bytes, 25_194_144);

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..200 {
        let v = rng.gen_range(1..200_000u64);
        let d = rng.gen_range(1..8192u64);
        let w = rng.gen_range(1..8192u64);
        let b = *[1u64, 2, 4].choose(&mut rng).unwrap();
        let s = buffer_sizing(v, d, w, b);
        assert_eq!(s.token_ids_bytes, v.div_ceil(8));
        assert_eq!(s.tokens_tensor_bytes, w * 4);
        assert_eq!(s.repack_buf_bytes, w * d * b);
        assert_eq!(
            s.total_bytes,
            v.div_ceil(8) + w * 4 + w * d * b
        );
    }
    pass(6, "buffer sizing arithmetic is byte-exact for pinned and random geometries");
}

// --------------------------------------------------------------------------
// 7. Decode-speed arithmetic: exact rationals, monotone in both arguments.
// --------------------------------------------------------------------------
#[test]
fn criterion_07_rational_speed_exact_and_monotone() {
    let speed = oracle_speed(
        Ratio::from_integer(4),
        Ratio::from_integer(8),
        Ratio::from_integer(2),
    )
    .unwrap();
    assert_eq!(speed, Ratio::new(2, 5));

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let tokens = Ratio::new(rng.gen_range(1..50i64), rng.gen_range(1..10i64));
        let tv = Ratio::new(rng.gen_range(1..40i64), rng.gen_range(1..8i64));
        let td = Ratio::new(rng.gen_range(0..40i64), rng.gen_range(1..8i64));
        let base = oracle_speed(tokens, tv, td).unwrap();

        let more_tokens = oracle_speed(tokens + Ratio::new(1, 3), tv, td).unwrap();
        assert!(more_tokens > base, "speed grows with tokens per cycle");

        let slower = oracle_speed(tokens, tv + Ratio::new(1, 7), td).unwrap();
        assert!(slower < base, "speed shrinks as the cycle lengthens");
    }
    assert!(oracle_speed(
        Ratio::from_integer(1),
        Ratio::from_integer(0),
        Ratio::from_integer(0)
    )
    .is_err());
    pass(7, "speed arithmetic is exact rational and strictly monotone");
}

// --------------------------------------------------------------------------
// 8. Stream-source ablation: prompt-only < updates-only < combined coverage
//    on a 50k-token corpus with 50 prompts.
// --------------------------------------------------------------------------
#[test]
fn criterion_08_coverage_ordering_of_stream_sources() {
    // Generations several times the prompt length: long enough for the
    // frozen prompt-window set to decay while the update stream adapts.
    let cfg = ExperimentConfig {
        prompts: 50,
        prompt_len: 32,
        max_new: 128,
        window: 64,
        ..ExperimentConfig::default()
    };
    let corpus = benchmark_corpus();
    let tokens: usize = corpus.split_whitespace().count();
    assert!(tokens >= 50_000, "corpus holds {tokens} tokens");

    let bench = Workbench::prepare(&cfg, &corpus).unwrap();
    let references = bench.ar_references(&cfg).unwrap();
    let mut cov = BTreeMap::new();
    for mode in [PolicyMode::CtxOnly, PolicyMode::ExtOnly, PolicyMode::Dynamic] {
        let traces = run_mode(&bench, &cfg, mode, &references).unwrap();
        cov.insert(mode.name(), coverage(&traces).unwrap());
    }
    let (ctx, ext, dynamic) = (cov["ctx-only"], cov["ext-only"], cov["dynamic"]);
    assert!(
        ctx < ext && ext < dynamic,
        "coverage ordering violated: ctx {ctx:.4}, ext {ext:.4}, dynamic {dynamic:.4}"
    );
    pass(8, "coverage orders ctx-only < ext-only < dynamic on the 50k corpus");
}

// --------------------------------------------------------------------------
// 9. Window sweep: acceptance does not degrade with a larger window and
//    saturates once the stream never overflows it.
// --------------------------------------------------------------------------
#[test]
fn criterion_09_window_sweep_saturates() {
    let cfg = ExperimentConfig {
        prompts: 20,
        prompt_len: 24,
        max_new: 40,
        ..ExperimentConfig::default()
    };
    let corpus = benchmark_corpus();
    let bench = Workbench::prepare(&cfg, &corpus).unwrap();
    let references = bench.ar_references(&cfg).unwrap();

    let windows = [32usize, 64, 128, 256, 512, 1024];
    let mut alphas = Vec::new();
    for &w in &windows {
        let mut swept = cfg.clone();
        swept.window = w;
        let traces = run_mode(&bench, &swept, PolicyMode::Dynamic, &references).unwrap();
        alphas.push(acceptance_stats(&traces).unwrap().alpha);
    }
    let first = alphas[0];
    let last = alphas[alphas.len() - 1];
    assert!(
        last >= first,
        "alpha at W=1024 ({last:.4}) fell below W=32 ({first:.4})"
    );
    let a512 = alphas[4];
    assert!(
        (last - a512).abs() <= 0.05 * a512,
        "no saturation: alpha(512) {a512:.4} vs alpha(1024) {last:.4}"
    );
    pass(9, "window sweep is non-degrading and saturates past the stream length");
}

// --------------------------------------------------------------------------
// 10. Overlap: async never exceeds sync across 1000 random parameter sets,
//     with equality exactly when there is nothing to gather.
// --------------------------------------------------------------------------
#[test]
fn criterion_10_async_dominates_sync() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for case in 0..1000 {
        let params = LatencyParams {
            c0: rng.gen_range(0.01..3.0),
            c1: if rng.gen_bool(0.5) { 0.0 } else { rng.gen_range(1e-9..1e-6) },
            g0: rng.gen_range(0.001..2.0),
            g1: if rng.gen_bool(0.5) { 0.0 } else { rng.gen_range(1e-9..1e-6) },
            backbone_ms: rng.gen_range(0.001..3.0),
            verify_ms: 1.0,
            dim: rng.gen_range(1..4096),
            batch: rng.gen_range(1..4),
        };
        let active = rng.gen_range(1..4096);
        let rows = if case % 2 == 0 { 0 } else { rng.gen_range(1..4096) };
        let levels = rng.gen_range(1..6);

        let sync = simulate_draft_step(&params, active, rows, levels, OverlapMode::Sync);
        let async_ = simulate_draft_step(&params, active, rows, levels, OverlapMode::Async);
        if rows == 0 {
            assert_eq!(
                async_.total_ms, sync.total_ms,
                "case {case}: nothing gathered, overlap must be a no-op"
            );
        } else {
            assert!(
                async_.total_ms < sync.total_ms,
                "case {case}: overlap must strictly help when a gather runs"
            );
        }
    }
    pass(10, "async step time <= sync over 1000 parameter sets, equal only without a gather");
}

// --------------------------------------------------------------------------
// 11. Reproducibility: a full benchmark rerun is byte-identical, for both
//     model families and both gather plans.
// --------------------------------------------------------------------------
fn dir_snapshot(dir: &std::path::Path) -> BTreeMap<String, Vec<u8>> {
    let mut map = BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let entry = entry.unwrap();
        map.insert(
            entry.file_name().to_string_lossy().into_owned(),
            std::fs::read(entry.path()).unwrap(),
        );
    }
    map
}

#[test]
fn criterion_11_benchmark_reruns_are_byte_identical() {
    let corpus = synth::generate(&SynthConfig {
        docs: 30,
        words_per_doc: 90,
        topics: 4,
        topic_words: 40,
        function_words: 10,
        seed: 19,
    })
    .unwrap();

    let count_cfg = ExperimentConfig {
        prompts: 4,
        prompt_len: 12,
        max_new: 24,
        window: 48,
        k_static: 32,
        ..ExperimentConfig::default()
    };
    let linear_cfg = ExperimentConfig {
        family: ModelFamily::Linear,
        dim: 12,
        gather: GatherMode::Delta,
        ..count_cfg.clone()
    };

    for (label, cfg) in [("count/full", &count_cfg), ("linear/delta", &linear_cfg)] {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        cmd_bench(cfg, &corpus, a.path()).unwrap();
        cmd_bench(cfg, &corpus, b.path()).unwrap();
        let snap_a = dir_snapshot(a.path());
        let snap_b = dir_snapshot(b.path());
        assert_eq!(
            snap_a.keys().collect::<Vec<_>>(),
            snap_b.keys().collect::<Vec<_>>(),
            "{label}: file sets differ"
        );
        for (name, bytes) in &snap_a {
            assert_eq!(bytes, &snap_b[name], "{label}: {name} differs between reruns");
        }
        assert_eq!(snap_a.len(), 2 + 4 * 5, "{label}: freq + comparison + 4 files x 5 modes");
    }
    pass(11, "benchmark reruns are byte-identical for both families");
}
