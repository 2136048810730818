//! The `lmprobe` command line, driven in-process and as a binary.

mod common;

use std::path::Path;
use std::process::Command;

use serde_json::Value;

use lmprobe::cli::run_from;
use lmprobe::report::{parse_report_csv, ALL_RELATIONS};

fn run(out: &Path, args: &[&str]) -> String {
    let d = common::data();
    let mut argv = vec!["lmprobe".to_string(), "--out".into(), out.display().to_string()];
    for a in args {
        argv.push(a.replace("@data", &d.display().to_string()));
    }
    let mut console = Vec::new();
    run_from(&argv, &mut console).unwrap_or_else(|e| panic!("{argv:?}: {e}"));
    String::from_utf8(console).unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

const CORPUS: [&str; 4] = ["--corpus", "@data/facts.jsonl", "--templates", "@data/templates.jsonl"];

#[test]
fn stats_counts_facts() {
    let dir = tempfile::tempdir().unwrap();
    let console = run(dir.path(), &["stats", CORPUS[0], CORPUS[1], "--filter"]);
    assert!(console.contains("relations"), "{console}");
    let stats = json(&dir.path().join("stats.json"));
    assert!(stats.to_string().contains("P31"));
}

#[test]
fn zero_shot_probe_has_zero_spread() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["probe"];
    args.extend(CORPUS);
    args.extend(["--n-demos", "0", "--trials", "3"]);
    run(dir.path(), &args);
    let rows = parse_report_csv(&std::fs::read_to_string(dir.path().join("report.csv")).unwrap()).unwrap();
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r.stddev == 0.0), "{rows:?}");
    assert!(rows.iter().any(|r| r.relation_id == ALL_RELATIONS));
    let report = json(&dir.path().join("report.json"));
    assert_eq!(report["trials"], 3);
    assert_eq!(report["config_snapshot"]["seeds"].as_array().unwrap().len(), 3);
}

#[test]
fn probe_writes_prompts_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let prompts = dir.path().join("prompts.txt");
    let prompts_arg = prompts.display().to_string();
    let mut args = vec!["probe"];
    args.extend(CORPUS);
    args.extend(["--n-demos", "3", "--selection", "close", "--dump-prompts", &prompts_arg]);
    run(dir.path(), &args);
    let text = std::fs::read_to_string(&prompts).unwrap();
    assert!(text.lines().count() > 10);
    assert!(text.lines().all(|l| l.matches("[MASK]").count() == 1));
    assert!(dir.path().join("report.json").exists());
}

#[test]
fn dump_prompts_prints_to_the_console() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["dump-prompts"];
    args.extend(CORPUS);
    args.extend(["--n-demos", "1", "--template-style", "arrow-double"]);
    let console = run(dir.path(), &args);
    assert!(console.lines().all(|l| l.contains("=>")), "{console}");
}

#[test]
fn sweep_writes_one_curve_point_per_count() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["sweep"];
    args.extend(CORPUS);
    args.extend(["--n-demos", "3,0,1,1"]);
    run(dir.path(), &args);
    let curves = std::fs::read_to_string(dir.path().join("curves.csv")).unwrap();
    let xs: Vec<&str> = curves
        .lines()
        .skip(1)
        .filter(|l| l.split(',').next().unwrap().ends_with("p@1"))
        .map(|l| l.split(',').nth(1).unwrap())
        .collect();
    assert_eq!(xs, ["0", "1", "3"], "{curves}");
}

#[test]
fn analogy_and_twc_run_on_bundled_data() {
    let dir = tempfile::tempdir().unwrap();
    run(dir.path(), &["analogy", "--bats", "@data/bats", "--n-demos", "0,3"]);
    assert!(dir.path().join("analogy.json").exists());
    assert!(dir.path().join("analogy.csv").exists());

    let console = run(
        dir.path(),
        &[
            "twc",
            "--scenes",
            "@data/twc/scenes",
            "--objects",
            "@data/twc/objects.json",
            "--prior",
            "oracle",
            "--runs",
            "2",
        ],
    );
    assert!(console.contains("oracle: score 1.0000"), "{console}");
    assert!(dir.path().join("twc.json").exists());
}

#[test]
fn embed_export_writes_a_wide_table() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["embed-export"];
    args.extend(CORPUS);
    run(dir.path(), &args);
    let text = std::fs::read_to_string(dir.path().join("embeddings.csv")).unwrap();
    let header = text.lines().next().unwrap();
    assert!(header.starts_with("query_id,relation_id,dim_0"), "{header}");
}

#[test]
fn unknown_flags_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let argv = ["lmprobe", "probe", "--corpus", "x.jsonl", "--no-such-flag"];
    let err = run_from(argv, &mut Vec::new()).unwrap_err();
    assert!(err.to_string().contains("no-such-flag"), "{err}");
    assert!(std::fs::read_dir(dir.path()).unwrap().next().is_none());
}

#[test]
fn binary_exits_non_zero_on_errors() {
    let status = Command::new(env!("CARGO_BIN_EXE_lmprobe"))
        .args(["stats", "--corpus", "/nonexistent/facts.jsonl"])
        .output()
        .unwrap();
    assert!(!status.status.success());
    let stderr = String::from_utf8_lossy(&status.stderr);
    assert!(stderr.starts_with("error:"), "{stderr}");
}

#[test]
fn binary_prints_help() {
    let out = Command::new(env!("CARGO_BIN_EXE_lmprobe")).arg("--help").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in ["stats", "probe", "sweep", "analogy", "twc", "embed-export", "dump-prompts"] {
        assert!(text.contains(sub), "{sub} missing from help");
    }
}
