//! Black-box CLI tests: exit codes, determinism, input immutability, and
//! the documented behavior of every subcommand.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

const GOLDEN_REPORT: &str = include_str!("../../../fixtures/golden_report_toyfact.json");

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_rocr")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("spawn rocr")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Fixtures and covariance stats materialized once per test process.
struct Env {
    root: PathBuf,
}

impl Env {
    fn fixtures(&self) -> PathBuf {
        self.root.join("fixtures")
    }
    fn stats(&self) -> PathBuf {
        self.root.join("stats")
    }
    fn toyfact(&self) -> String {
        self.fixtures().join("toyfact").display().to_string()
    }
    fn tasks(&self) -> String {
        self.fixtures().join("tasks_toyfact.jsonl").display().to_string()
    }
    fn templates(&self) -> String {
        self.fixtures().join("templates.txt").display().to_string()
    }
    fn corpus(&self) -> String {
        self.fixtures().join("corpus_toyfact.txt").display().to_string()
    }
}

fn env() -> &'static Env {
    static ENV: OnceLock<Env> = OnceLock::new();
    ENV.get_or_init(|| {
        let root = std::env::temp_dir().join(format!("rocr-cli-tests-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&root);
        std::fs::create_dir_all(&root).unwrap();
        let e = Env { root };
        let out = run(&["fixtures", "--out", &e.fixtures().display().to_string()]);
        assert!(out.status.success(), "{}", stderr(&out));
        let out = run(&[
            "covariance",
            "--model",
            &e.toyfact(),
            "--corpus",
            &e.corpus(),
            "--layers",
            "0,1",
            "--out",
            &e.stats().display().to_string(),
        ]);
        assert!(out.status.success(), "{}", stderr(&out));
        e
    })
}

fn dir_digest(dir: &Path) -> Vec<(String, u64)> {
    let mut entries: Vec<(String, u64)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            let bytes = std::fs::read(e.path()).unwrap();
            let mut h = 0xcbf29ce484222325u64;
            for b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
            (e.file_name().to_string_lossy().into_owned(), h)
        })
        .collect();
    entries.sort();
    entries
}

fn edit_to(e: &Env, out_dir: &Path, extra: &[&str]) -> Output {
    let mut args: Vec<String> = vec![
        "edit".into(),
        "--model".into(),
        e.toyfact(),
        "--out".into(),
        out_dir.display().to_string(),
        "--templates".into(),
        e.templates(),
        "--cov-dir".into(),
        e.stats().display().to_string(),
        "--forget".into(),
        "alpha".into(),
    ];
    args.extend(extra.iter().map(|s| s.to_string()));
    let arg_refs: Vec<&str> = args.iter().map(String::as_str).collect();
    run(&arg_refs)
}

#[test]
fn covariance_writes_one_file_per_layer_and_prints_summary() {
    let e = env();
    assert!(e.stats().join("layer_0.cov").exists());
    assert!(e.stats().join("layer_1.cov").exists());
    // Summary content checked at generation time in `env()`; re-run to
    // inspect stdout.
    let out = run(&[
        "covariance",
        "--model",
        &e.toyfact(),
        "--corpus",
        &e.corpus(),
        "--layers",
        "0",
        "--out",
        &e.root.join("stats2").display().to_string(),
    ]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("n_keys=205"), "{text}");
    assert!(text.contains("max_eig="), "{text}");
}

#[test]
fn covariance_missing_corpus_exits_2() {
    let e = env();
    let out = run(&[
        "covariance",
        "--model",
        &e.toyfact(),
        "--corpus",
        "/nonexistent/corpus.txt",
        "--layers",
        "0",
        "--out",
        &e.root.join("x").display().to_string(),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn covariance_zero_max_keys_exits_3() {
    let e = env();
    let out = run(&[
        "covariance",
        "--model",
        &e.toyfact(),
        "--corpus",
        &e.corpus(),
        "--layers",
        "0",
        "--out",
        &e.root.join("y").display().to_string(),
        "--max-keys",
        "0",
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
}

#[test]
fn semantic_edit_writes_receipt_and_leaves_input_untouched() {
    let e = env();
    let before = dir_digest(&e.fixtures().join("toyfact"));
    let out_dir = e.root.join("edited-semantic");
    let out = edit_to(
        e,
        &out_dir,
        &["--variant", "semantic", "--target", "beta", "--layers", "0,1"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(before, dir_digest(&e.fixtures().join("toyfact")));

    let receipt: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("receipt.json")).unwrap())
            .unwrap();
    let layers = receipt["layers"].as_array().unwrap();
    assert_eq!(layers.len(), 2);
    for rec in layers {
        assert!(rec["rank_ratio"].as_f64().unwrap() <= 1e-10);
    }
    assert!(receipt["total_wall_ms"].as_f64().unwrap() < 1000.0);
    assert_eq!(receipt["forget_word"], "alpha");
    assert_eq!(receipt["target_word"], "beta");
    assert!(receipt["covariance_digests"]["0"]
        .as_str()
        .unwrap()
        .starts_with("fnv1a64:"));
}

#[test]
fn noise_edit_is_seed_deterministic() {
    let e = env();
    let d1 = e.root.join("noise-a");
    let d2 = e.root.join("noise-b");
    for d in [&d1, &d2] {
        let out = edit_to(e, d, &["--variant", "noise", "--seed", "7", "--layers", "0"]);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let t1 = std::fs::read(d1.join("model.safetensors")).unwrap();
    let t2 = std::fs::read(d2.join("model.safetensors")).unwrap();
    assert_eq!(t1, t2);
}

#[test]
fn semantic_without_target_exits_1() {
    let e = env();
    let out = edit_to(e, &e.root.join("no-target"), &["--variant", "semantic", "--layers", "0"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--target"));
}

#[test]
fn json_errors_flag_emits_structured_stderr() {
    let e = env();
    let out = run(&[
        "edit",
        "--json-errors",
        "--model",
        &e.toyfact(),
        "--out",
        &e.root.join("json-err").display().to_string(),
        "--templates",
        &e.templates(),
        "--cov-dir",
        &e.stats().display().to_string(),
        "--forget",
        "alpha",
        "--variant",
        "semantic",
        "--layers",
        "0",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let parsed: serde_json::Value = serde_json::from_str(stderr(&out).trim()).unwrap();
    assert_eq!(parsed["error"], "usage");
    assert_eq!(parsed["exit_code"], 1);
}

#[test]
fn eval_matches_the_golden_report() {
    let e = env();
    let report_path = e.root.join("eval-golden.json");
    let out = run(&[
        "eval",
        "--model",
        &e.toyfact(),
        "--tasks",
        &e.tasks(),
        "--out",
        &report_path.display().to_string(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));

    let got: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    let golden: serde_json::Value = serde_json::from_str(GOLDEN_REPORT).unwrap();
    assert_eq!(got["model_digest"], golden["model_digest"]);
    let got_cells = got["cells"].as_array().unwrap();
    let golden_cells = golden["cells"].as_array().unwrap();
    assert_eq!(got_cells.len(), golden_cells.len());
    for (g, w) in got_cells.iter().zip(golden_cells) {
        assert_eq!(g["split"], w["split"]);
        assert_eq!(g["format"], w["format"]);
        let diff = (g["mean_pct"].as_f64().unwrap() - w["mean_pct"].as_f64().unwrap()).abs();
        assert!(diff < 1e-9, "{g} vs {w}");
    }
}

#[test]
fn edited_model_scores_strictly_lower_on_forget_cells() {
    let e = env();
    let edited = e.root.join("edited-for-eval");
    let out = edit_to(
        e,
        &edited,
        &["--variant", "semantic", "--target", "beta", "--layers", "0"],
    );
    assert!(out.status.success(), "{}", stderr(&out));

    let base_report = e.root.join("base.json");
    let edited_report = e.root.join("edited.json");
    for (model, path) in [(e.toyfact(), &base_report), (edited.display().to_string(), &edited_report)] {
        let out = run(&[
            "eval", "--model", &model, "--tasks", &e.tasks(), "--out",
            &path.display().to_string(),
        ]);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let base: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&base_report).unwrap()).unwrap();
    let after: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&edited_report).unwrap()).unwrap();
    for (b, a) in base["cells"]
        .as_array()
        .unwrap()
        .iter()
        .zip(after["cells"].as_array().unwrap())
    {
        let (bv, av) = (b["mean_pct"].as_f64().unwrap(), a["mean_pct"].as_f64().unwrap());
        if b["split"] == "forget" {
            assert!(av < bv, "forget cell {b} did not drop ({bv} -> {av})");
        } else {
            assert!((av - bv).abs() < 1e-4, "retain cell {b} moved ({bv} -> {av})");
        }
    }

    // Compare prints signed percentages.
    let out = run(&[
        "compare",
        "--before",
        &base_report.display().to_string(),
        "--after",
        &edited_report.display().to_string(),
    ]);
    assert!(out.status.success());
    assert!(stdout(&out).contains('%'));
}

#[test]
fn eval_names_the_malformed_line() {
    let e = env();
    let bad = e.root.join("bad_tasks.jsonl");
    let mut lines: Vec<String> = std::fs::read_to_string(e.tasks())
        .unwrap()
        .lines()
        .map(String::from)
        .collect();
    lines[2] = "{not json".into();
    std::fs::write(&bad, lines.join("\n")).unwrap();
    let out = run(&[
        "eval",
        "--model",
        &e.toyfact(),
        "--tasks",
        &bad.display().to_string(),
        "--out",
        &e.root.join("bad-report.json").display().to_string(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line 3"), "{}", stderr(&out));
}

#[test]
fn compare_paper_numbers_reproduces_published_reductions() {
    let e = env();
    let mk = |qa: f64, fb: f64| {
        serde_json::json!({
            "schema": "rocr.report.v1",
            "aggregation": "pooled-mean",
            "model_digest": "",
            "task_digest": "",
            "tasks": [],
            "cells": [
                {"split": "forget", "format": "QA", "mean_pct": qa, "n_tasks": 1},
                {"split": "retain", "format": "FB", "mean_pct": fb, "n_tasks": 1},
            ],
        })
    };
    let before = e.root.join("paper_before.json");
    let after = e.root.join("paper_after.json");
    std::fs::write(&before, mk(46.06, 80.79).to_string()).unwrap();
    std::fs::write(&after, mk(13.14, 74.47).to_string()).unwrap();
    let out = run(&[
        "compare",
        "--before",
        &before.display().to_string(),
        "--after",
        &after.display().to_string(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("-71.47%"), "{text}");
    assert!(text.contains("-7.82%"), "{text}");

    // Identical reports compare to all zeros.
    let out = run(&[
        "compare",
        "--before",
        &before.display().to_string(),
        "--after",
        &before.display().to_string(),
    ]);
    assert!(stdout(&out).contains("0.00%"));
}

#[test]
fn compare_mismatched_cells_exits_6() {
    let e = env();
    let a = e.root.join("cmp_a.json");
    let b = e.root.join("cmp_b.json");
    let report = |fmt: &str| {
        serde_json::json!({
            "schema": "rocr.report.v1",
            "aggregation": "pooled-mean",
            "model_digest": "",
            "task_digest": "",
            "tasks": [],
            "cells": [{"split": "forget", "format": fmt, "mean_pct": 1.0, "n_tasks": 1}],
        })
    };
    std::fs::write(&a, report("QA").to_string()).unwrap();
    std::fs::write(&b, report("FB").to_string()).unwrap();
    let out = run(&[
        "compare",
        "--before",
        &a.display().to_string(),
        "--after",
        &b.display().to_string(),
    ]);
    assert_eq!(out.status.code(), Some(6));
}

#[test]
fn sweep_reports_every_layer_and_survives_invalid_ones() {
    let e = env();
    let out_path = e.root.join("sweep.json");
    let out = run(&[
        "sweep",
        "--model",
        &e.toyfact(),
        "--tasks",
        &e.tasks(),
        "--sweep-layers",
        "0,1,99",
        "--out",
        &out_path.display().to_string(),
        "--templates",
        &e.templates(),
        "--cov-dir",
        &e.stats().display().to_string(),
        "--forget",
        "alpha",
        "--variant",
        "semantic",
        "--target",
        "beta",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("layer   0:"), "{text}");
    assert!(text.contains("layer   1:"), "{text}");
    assert!(text.contains("layer  99: error"), "{text}");

    let sweep: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
    let rows = sweep["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    for row in &rows[..2] {
        assert_eq!(row["cells"].as_array().unwrap().len(), 8);
    }
    assert!(rows[2]["error"].is_string());
}

#[test]
fn model_root_env_var_resolves_relative_paths() {
    let e = env();
    let out = Command::new(bin())
        .args([
            "eval",
            "--model",
            "toyfact",
            "--tasks",
            &e.tasks(),
            "--out",
            &e.root.join("env-report.json").display().to_string(),
        ])
        .env("ROCR_MODEL_ROOT", e.fixtures())
        .current_dir(&e.root)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
}

#[test]
fn repeated_edits_are_bit_identical() {
    let e = env();
    let d1 = e.root.join("repeat-a");
    let d2 = e.root.join("repeat-b");
    for d in [&d1, &d2] {
        let out = edit_to(
            e,
            d,
            &["--variant", "semantic", "--target", "beta", "--layers", "0"],
        );
        assert!(out.status.success());
    }
    assert_eq!(
        std::fs::read(d1.join("model.safetensors")).unwrap(),
        std::fs::read(d2.join("model.safetensors")).unwrap()
    );
    // Receipts agree except for wall-clock timings.
    let strip = |p: &Path| {
        let mut v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap();
        v["total_wall_ms"] = 0.into();
        for rec in v["layers"].as_array_mut().unwrap() {
            rec["wall_ms"] = 0.into();
        }
        v
    };
    assert_eq!(strip(&d1.join("receipt.json")), strip(&d2.join("receipt.json")));
}

#[test]
fn edit_with_missing_covariance_file_exits_2() {
    let e = env();
    let empty_dir = e.root.join("empty-stats");
    std::fs::create_dir_all(&empty_dir).unwrap();
    let out = run(&[
        "edit",
        "--model",
        &e.toyfact(),
        "--out",
        &e.root.join("never").display().to_string(),
        "--templates",
        &e.templates(),
        "--cov-dir",
        &empty_dir.display().to_string(),
        "--forget",
        "alpha",
        "--variant",
        "semantic",
        "--target",
        "beta",
        "--layers",
        "0",
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}
