//! The `clusterrag` binary against the toy fixture.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use clusterrag::eval::EvalRecord;

fn fixture() -> (tempfile::TempDir, PathBuf) {
    let src = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/toy");
    let tmp = tempfile::tempdir().unwrap();
    for entry in fs::read_dir(&src).unwrap() {
        let entry = entry.unwrap();
        fs::copy(entry.path(), tmp.path().join(entry.file_name())).unwrap();
    }
    let cfg = tmp.path().join("toy.toml");
    (tmp, cfg)
}

fn clusterrag(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clusterrag")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = clusterrag(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> (i32, String) {
    let out = clusterrag(args);
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stderr).into_owned())
}

#[test]
fn build_writes_manifest_and_is_deterministic() {
    let (tmp, cfg) = fixture();
    let cfg = cfg.to_str().unwrap();
    let stdout = ok(&["build", "-c", cfg]);
    assert!(stdout.contains("clusters: 3"), "{stdout}");
    let art = tmp.path().join("artifacts");
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(art.join("manifest.json")).unwrap()).unwrap();
    for key in ["clusters", "neighbors", "users", "corpus.documents"] {
        assert!(manifest.get(key).is_some(), "manifest lacks {key}");
    }
    let first: Vec<Vec<u8>> = ["clusters.json", "neighbors.json", "users.json", "manifest.json"]
        .iter()
        .map(|f| fs::read(art.join(f)).unwrap())
        .collect();
    ok(&["build", "-c", cfg, "--sequential"]);
    let second: Vec<Vec<u8>> = ["clusters.json", "neighbors.json", "users.json", "manifest.json"]
        .iter()
        .map(|f| fs::read(art.join(f)).unwrap())
        .collect();
    assert_eq!(first, second);
}

#[test]
fn invalid_configurations_exit_with_validation_code() {
    let (_tmp, cfg) = fixture();
    let cfg = cfg.to_str().unwrap();
    let (c, err) = code(&["build", "-c", cfg, "--use-kmeans"]);
    assert_eq!(c, 1, "{err}");
    assert!(err.contains("kmeans_k"), "{err}");
    let (c, _) = code(&["run", "-c", cfg, "--centroids-only", "--no-doc-ranking", "--dry-run"]);
    assert_eq!(c, 1);
    let (c, _) = code(&["build", "-c", cfg, "--k", "0"]);
    assert_eq!(c, 1);
    let (c, _) = code(&["build", "--bogus-flag"]);
    assert_eq!(c, 1);
    assert_eq!(code(&["--help"]).0, 0);
}

#[test]
fn run_without_artifacts_is_a_runtime_error() {
    let (_tmp, cfg) = fixture();
    let (c, err) = code(&["run", "-c", cfg.to_str().unwrap(), "--dry-run"]);
    assert_eq!(c, 2, "{err}");
}

#[test]
fn dry_run_writes_bundles_only() {
    let (tmp, cfg) = fixture();
    let cfg = cfg.to_str().unwrap();
    ok(&["build", "-c", cfg]);
    ok(&["run", "-c", cfg, "--dry-run"]);
    let out = tmp.path().join("out");
    let bundles = fs::read_to_string(out.join("bundles.jsonl")).unwrap();
    assert_eq!(bundles.lines().count(), 26);
    assert!(out.join("traces.jsonl").exists());
    assert!(out.join("index/manifest.json").exists());
    assert!(!out.join("results.jsonl").exists());
    assert!(!out.join("report.json").exists());
}

#[test]
fn run_and_report_single_and_paired() {
    let (tmp, cfg) = fixture();
    let cfg = cfg.to_str().unwrap();
    ok(&["build", "-c", cfg]);
    let a = tmp.path().join("hybrid");
    let b = tmp.path().join("user");
    ok(&["run", "-c", cfg, "--out", a.to_str().unwrap()]);
    ok(&["run", "-c", cfg, "--out", b.to_str().unwrap(), "--mode", "USER_ONLY"]);
    let ra = a.join("results.jsonl");
    let rb = b.join("results.jsonl");
    let records: Vec<EvalRecord> = fs::read_to_string(&ra)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(records.len(), 26);

    let csv = tmp.path().join("one.csv");
    let text = ok(&["report", ra.to_str().unwrap(), "--csv", csv.to_str().unwrap()]);
    assert!(text.contains("accuracy"), "{text}");
    let csv = fs::read_to_string(&csv).unwrap();
    assert_eq!(csv.lines().next(), Some("task,metric,value"));
    assert!(csv.lines().any(|l| l.starts_with("SYNTH,accuracy,")), "{csv}");

    let csv2 = tmp.path().join("two.csv");
    ok(&["report", rb.to_str().unwrap(), ra.to_str().unwrap(), "--csv", csv2.to_str().unwrap()]);
    let csv2 = fs::read_to_string(&csv2).unwrap();
    assert_eq!(csv2.lines().next(), Some("task,metric,a,b,delta,p_value,sig"));
    let acc = csv2.lines().find(|l| l.starts_with("SYNTH,accuracy,")).unwrap();
    let cols: Vec<&str> = acc.split(',').collect();
    let (va, vb, delta): (f64, f64, f64) = (cols[2].parse().unwrap(), cols[3].parse().unwrap(), cols[4].parse().unwrap());
    assert!((vb - va - delta).abs() < 1e-6, "{acc}");
    assert!(vb > va, "hybrid should beat user-only on the toy fixture: {acc}");
    let p: f64 = cols[5].parse().unwrap();
    let stars = if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    };
    assert_eq!(cols[6], stars);
}

#[test]
fn report_rejects_bad_input() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let (c, err) = code(&["report", empty.to_str().unwrap()]);
    assert_ne!(c, 0);
    assert!(!err.is_empty());

    let (src, cfg) = fixture();
    let cfg = cfg.to_str().unwrap();
    ok(&["build", "-c", cfg]);
    ok(&["run", "-c", cfg]);
    let mut text = fs::read_to_string(src.path().join("out/results.jsonl")).unwrap();
    text.push_str("{ broken\n");
    let bad = tmp.path().join("bad.jsonl");
    fs::write(&bad, text).unwrap();
    let (c, err) = code(&["report", bad.to_str().unwrap()]);
    assert_ne!(c, 0);
    assert!(err.contains("27"), "{err}");
}

#[test]
fn sweep_over_m_gives_one_row_per_value() {
    let (tmp, cfg) = fixture();
    let cfg = cfg.to_str().unwrap();
    ok(&["build", "-c", cfg]);
    let stdout = ok(&["sweep", "-c", cfg, "--sweep", "m=1..12"]);
    let rows: Vec<Vec<&str>> = stdout.lines().skip(1).map(|l| l.split(',').collect()).collect();
    let acc: Vec<&Vec<&str>> = rows.iter().filter(|r| r[6] == "accuracy").collect();
    assert_eq!(acc.len(), 12);
    for (i, r) in acc.iter().enumerate() {
        assert_eq!(r[0], "m");
        assert_eq!(r[1], (i + 1).to_string());
    }
    let scored: Vec<f64> = acc.iter().map(|r| r[3].parse().unwrap()).collect();
    assert!(scored.windows(2).all(|w| w[0] <= w[1]), "{scored:?}");
    assert!(tmp.path().join("out/sweep.csv").exists());
    assert!(tmp.path().join("out/sweep.json").exists());

    let (c, _) = code(&["sweep", "-c", cfg, "--sweep", "m=1..13"]);
    assert_eq!(c, 1);
    let (c, _) = code(&["sweep", "-c", cfg, "--sweep", "q=1"]);
    assert_eq!(c, 1);
}

#[test]
fn synth_writes_a_loadable_benchmark() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("bench");
    let stdout = ok(&[
        "synth",
        "--out",
        out.to_str().unwrap(),
        "--cohorts",
        "2",
        "--cohort-size",
        "5",
        "--loners",
        "1",
        "--collab-per-cohort",
        "2",
        "--dim",
        "8",
    ]);
    assert!(stdout.contains("11 queries"), "{stdout}");
    for f in ["documents.jsonl", "embeddings.bin", "queries.jsonl", "query_embeddings.bin"] {
        assert!(out.join(f).exists(), "{f}");
    }
}
