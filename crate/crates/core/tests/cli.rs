//! End-to-end checks of the installed binary: exit codes, golden outputs,
//! and the generate -> bench pipeline.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::tempdir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_specprune"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("utf-8 stdout")
}

#[test]
fn sizing_prints_the_golden_footprint_json() {
    let out = run(&[
        "sizing",
        "--vocab-size",
        "128256",
        "--wmax",
        "3072",
        "--dim",
        "4096",
    ]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["token_ids_bytes"], 16_032);
    assert_eq!(v["tokens_tensor_bytes"], 12_288);
    assert_eq!(v["repack_buf_bytes"], 25_165_824);
    assert_eq!(v["total_bytes"], 25_194_144);
}

#[test]
fn gen_corpus_is_deterministic_and_shaped() {
    let args = [
        "gen-corpus",
        "--docs",
        "5",
        "--words-per-doc",
        "30",
        "--topics",
        "2",
        "--topic-words",
        "15",
        "--seed",
        "3",
    ];
    let a = run(&args);
    let b = run(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout, "same seed, same corpus");
    let text = stdout(&a);
    assert_eq!(text.lines().count(), 5);
    assert!(text.lines().all(|l| l.split_whitespace().count() == 30));

    let c = run(&["gen-corpus", "--docs", "5", "--words-per-doc", "30", "--seed", "4"]);
    assert_ne!(a.stdout, c.stdout, "different seed, different corpus");
}

fn write_corpus(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("corpus.txt");
    let out = bin()
        .args([
            "gen-corpus",
            "--docs",
            "20",
            "--words-per-doc",
            "60",
            "--topics",
            "3",
            "--topic-words",
            "25",
            "--out",
        ])
        .arg(&path)
        .output()
        .unwrap();
    assert!(out.status.success());
    path
}

#[test]
fn bench_pipeline_writes_reports_and_comparison() {
    let dir = tempdir().unwrap();
    let corpus = write_corpus(dir.path());
    let out_dir = dir.path().join("results");
    let out = bin()
        .args(["bench", "--corpus"])
        .arg(&corpus)
        .args([
            "--prompts",
            "2",
            "--prompt-len",
            "8",
            "--max-new",
            "12",
            "--wmax",
            "32",
            "--k-static",
            "16",
            "--out",
        ])
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let comparison = fs::read_to_string(out_dir.join("comparison.csv")).unwrap();
    assert!(comparison.starts_with("mode,alpha,coverage,sim_speed\n"));
    assert_eq!(comparison.lines().count(), 6, "header plus five modes");
    assert!(out_dir.join("freq.csv").exists());
    // Each comparison row restates the matching per-mode report, so the two
    // files must agree figure for figure.
    for line in comparison.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        let report: serde_json::Value = serde_json::from_str(
            &fs::read_to_string(out_dir.join(format!("report_{}.json", fields[0]))).unwrap(),
        )
        .unwrap();
        assert_eq!(report["mode"], fields[0]);
        assert_eq!(format!("{:.6}", report["alpha"].as_f64().unwrap()), fields[1]);
        assert_eq!(format!("{:.6}", report["coverage"].as_f64().unwrap()), fields[2]);
        assert_eq!(
            format!("{:.6}", report["sim_speed_tok_per_ms"].as_f64().unwrap()),
            fields[3]
        );
    }
    let table = stdout(&out);
    assert!(table.contains("dynamic"), "summary table lists the modes");
}

#[test]
fn config_file_drives_a_run_and_flags_override_it() {
    let dir = tempdir().unwrap();
    let corpus = write_corpus(dir.path());
    let cfg_path = dir.path().join("exp.json");
    fs::write(
        &cfg_path,
        r#"{"prompts":2,"prompt_len":8,"max_new":10,"window":32,"k_static":16,"modes":["dynamic"]}"#,
    )
    .unwrap();
    let out_dir = dir.path().join("results");
    let out = bin()
        .args(["bench", "--corpus"])
        .arg(&corpus)
        .args(["--config"])
        .arg(&cfg_path)
        .args(["--max-new", "6", "--out"])
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let comparison = fs::read_to_string(out_dir.join("comparison.csv")).unwrap();
    assert_eq!(comparison.lines().count(), 2, "config restricts to one mode");
    // The flag override shortened the runs: 6 steps per prompt at most.
    let report = fs::read_to_string(out_dir.join("report_dynamic.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&report).unwrap();
    let steps = v["steps"].as_array().unwrap();
    assert!(steps.len() <= 2 * 6);
    assert!(!out_dir.join("report_full.json").exists());
}

#[test]
fn configuration_errors_exit_with_code_two() {
    let dir = tempdir().unwrap();
    let corpus = write_corpus(dir.path());

    // Invalid field value.
    let out = bin()
        .args(["bench", "--corpus"])
        .arg(&corpus)
        .args(["--depth", "0"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    // Unknown policy mode name.
    let out = bin()
        .args(["bench", "--corpus"])
        .arg(&corpus)
        .args(["--modes", "bogus"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    // Unknown flag (handled by the argument parser itself).
    let out = bin().args(["bench", "--no-such-flag"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    // Malformed config file.
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{not json").unwrap();
    let out = bin()
        .args(["bench", "--corpus"])
        .arg(&corpus)
        .arg("--config")
        .arg(&bad)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_with_code_one() {
    let out = bin()
        .args(["bench", "--corpus", "/nonexistent/corpus.txt"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn sweep_and_coverage_write_csv_to_stdout() {
    let dir = tempdir().unwrap();
    let corpus = write_corpus(dir.path());

    let out = bin()
        .args(["sweep-wmax", "--corpus"])
        .arg(&corpus)
        .args([
            "--windows",
            "8,32",
            "--prompts",
            "2",
            "--prompt-len",
            "8",
            "--max-new",
            "10",
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.starts_with("wmax,alpha,coverage,sim_speed\n"));
    assert_eq!(text.lines().count(), 3);

    let out = bin()
        .args(["coverage", "--corpus"])
        .arg(&corpus)
        .args([
            "--sizes",
            "8,32",
            "--prompts",
            "2",
            "--prompt-len",
            "8",
            "--max-new",
            "10",
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.starts_with("policy,size,coverage\n"));
    assert_eq!(text.lines().count(), 5, "two static rows and two dynamic rows");

    let out = bin()
        .args(["ablate", "--corpus"])
        .arg(&corpus)
        .args(["--prompts", "2", "--prompt-len", "8", "--max-new", "10", "--wmax", "32"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.starts_with("mode,alpha,coverage\n"));
    assert_eq!(text.lines().count(), 4);
}
