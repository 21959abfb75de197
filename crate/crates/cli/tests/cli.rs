//! Runs the `cmkt` binary end to end on small corpora.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cmkt_core::model::{Checkpoint, Cmkt};
use sha2::{Digest, Sha256};

const SMALL: &[&str] = &[
    "--set",
    "simulate.n_students=25",
    "--set",
    "simulate.questions_per_student=20",
    "--set",
    "simulate.n_questions=12",
    "--set",
    "simulate.n_concepts=4",
    "--set",
    "model={d=8, d_q=8, d_k=8, d_q_theta=8, d_k_theta=8, d_a=8, c_q=10, c_k=10}",
    "--set",
    "train.batch_size=8",
];

fn cmkt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cmkt")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = cmkt(args);
    assert!(
        out.status.success(),
        "cmkt {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn sha(path: &Path) -> Vec<u8> {
    Sha256::digest(fs::read(path).unwrap()).to_vec()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn with_small<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let mut v = args.to_vec();
    v.extend_from_slice(SMALL);
    v
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

/// Simulates the small corpus into `dir` and returns the log path.
fn small_log(dir: &Path) -> PathBuf {
    ok(&with_small(&["simulate", "--seed", "3", "--out-dir", s(dir)]));
    dir.join("log.csv")
}

#[test]
fn simulate_default_counts_and_hashes() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["simulate", "--seed", "11", "--out-dir", s(&a)]);
    ok(&["simulate", "--seed", "11", "--out-dir", s(&b)]);
    let log = fs::read_to_string(a.join("log.csv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 200 * 60);
    let truth = fs::read_to_string(a.join("truth.csv")).unwrap();
    assert_eq!(truth.lines().count(), 1 + 200 * 60 * 10);
    assert_eq!(sha(&a.join("log.csv")), sha(&b.join("log.csv")));
    assert_eq!(sha(&a.join("truth.csv")), sha(&b.join("truth.csv")));
    let first = sha(&a.join("simulate.json"));
    ok(&["simulate", "--seed", "11", "--out-dir", s(&a)]);
    assert_eq!(first, sha(&a.join("simulate.json")));
    let meta = json(&a.join("simulate.json"));
    assert_eq!(meta["seed"], 11);
    assert_eq!(meta["config"]["simulate"]["seed"], 11);
}

#[test]
fn simulate_rejects_multi_concept_questions() {
    let tmp = tempfile::tempdir().unwrap();
    let out = cmkt(&[
        "simulate",
        "--set",
        "simulate.concepts_per_question=2",
        "--out-dir",
        s(tmp.path()),
    ]);
    assert_ne!(code(&out), 0);
    assert!(stderr(&out).contains("concepts_per_question"), "{}", stderr(&out));
}

#[test]
fn usage_errors_exit_one() {
    let out = cmkt(&["simulate", "--set", "simulate.no_such_key=1"]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));
    assert!(stderr(&out).contains("no_such_key"));
    assert_eq!(code(&cmkt(&["train", "--fold", "7"])), 1);
    assert_eq!(code(&cmkt(&["train"])), 1);
    assert_eq!(code(&cmkt(&["frobnicate"])), 1);
}

#[test]
fn config_file_and_flags_combine() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.toml");
    fs::write(&cfg, "seed = 5\n[simulate]\nn_students = 7\nquestions_per_student = 3\n").unwrap();
    let out_dir = tmp.path().join("o");
    ok(&["simulate", "--config", s(&cfg), "--seed", "6", "--out-dir", s(&out_dir)]);
    let meta = json(&out_dir.join("simulate.json"));
    assert_eq!(meta["seed"], 6);
    assert_eq!(meta["log_rows"], 21);
}

#[test]
fn missing_log_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = cmkt(&["ingest", "--log", s(&tmp.path().join("absent.csv")), "--out-dir", s(tmp.path())]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn ingest_writes_catalogs() {
    let tmp = tempfile::tempdir().unwrap();
    let log = small_log(&tmp.path().join("sim"));
    let out = tmp.path().join("ing");
    ok(&with_small(&["ingest", "--log", s(&log), "--out-dir", s(&out)]));
    let meta = json(&out.join("ingest.json"));
    assert_eq!(meta["students"], 25);
    assert_eq!(meta["records"], 500);
    assert_eq!(meta["single_concept_questions"], true);
    assert!(meta["std_log"].is_number());
    let cat = json(&out.join("catalog.json"));
    assert_eq!(cat["concepts"].as_array().unwrap().len(), 4);
    assert!(out.join("difficulty.json").exists());
}

#[test]
fn zero_epochs_keeps_the_initialization() {
    let tmp = tempfile::tempdir().unwrap();
    let log = small_log(&tmp.path().join("sim"));
    let out = tmp.path().join("t");
    ok(&with_small(&["train", "--log", s(&log), "--epochs", "0", "--seed", "4", "--out-dir", s(&out)]));
    let ckpt = Checkpoint::load(&out.join("fold0/checkpoint.json")).unwrap();
    let init = Cmkt::new(ckpt.model.clone(), 4).unwrap();
    assert_eq!(ckpt.to_model().unwrap().params, init.params);
    let metrics = json(&out.join("fold0/metrics.json"));
    assert_eq!(metrics["best_epoch"], 0);
    assert_eq!(metrics["epochs"].as_array().unwrap().len(), 0);
    assert!(metrics["test"]["auc"].is_number());
    assert_eq!(metrics["config"]["seed"], 4);
}

#[test]
fn summary_has_metric_keys_and_ablation_zeroes_cm() {
    let tmp = tempfile::tempdir().unwrap();
    let log = small_log(&tmp.path().join("sim"));
    let full = tmp.path().join("full");
    ok(&with_small(&["train", "--log", s(&log), "--epochs", "2", "--out-dir", s(&full)]));
    let summary = json(&full.join("summary.json"));
    for key in ["acc", "auc", "gaucm", "monotonic_rate", "config", "seed", "folds"] {
        assert!(summary.get(key).is_some(), "summary lacks {key}");
    }
    let log_text = fs::read_to_string(full.join("fold0/epochs.log")).unwrap();
    assert_eq!(log_text.lines().next().unwrap(), "epoch\tbce\tcm\ttheta_reg\tval_acc\tval_auc");
    assert_eq!(log_text.lines().count(), 3);

    let ablated = tmp.path().join("nocm");
    ok(&with_small(&["train", "--log", s(&log), "--epochs", "2", "--ablate", "no-cm", "--out-dir", s(&ablated)]));
    let m = json(&ablated.join("fold0/metrics.json"));
    assert_eq!(m["config"]["train"]["cm_weight"], 0.0);
    assert_eq!(m["test"]["cm"], 0.0);
    for e in m["epochs"].as_array().unwrap() {
        assert_eq!(e["train"]["cm"], 0.0);
        assert_eq!(e["validation"]["cm"], 0.0);
    }
    let full_m = json(&full.join("fold0/metrics.json"));
    assert!(full_m["test"]["cm"].as_f64().unwrap() > 0.0);
}

#[test]
fn all_folds_run_and_average() {
    let tmp = tempfile::tempdir().unwrap();
    let log = small_log(&tmp.path().join("sim"));
    let out = tmp.path().join("all");
    ok(&with_small(&["train", "--log", s(&log), "--epochs", "1", "--fold", "all", "--out-dir", s(&out)]));
    let summary = json(&out.join("summary.json"));
    let folds = summary["folds"].as_array().unwrap();
    assert_eq!(folds.len(), 5);
    let mean: f64 = folds.iter().map(|f| f["test"]["auc"].as_f64().unwrap()).sum::<f64>() / 5.0;
    assert!((summary["auc"].as_f64().unwrap() - mean).abs() < 1e-12);
    for k in 0..5 {
        assert!(out.join(format!("fold{k}/checkpoint.json")).exists());
    }
}

#[test]
fn training_is_byte_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let log = small_log(&tmp.path().join("sim"));
    let out = tmp.path().join("r");
    let args = with_small(&["train", "--log", s(&log), "--epochs", "2", "--seed", "8", "--out-dir", s(&out)]);
    ok(&args);
    let first = [
        sha(&out.join("fold0/metrics.json")),
        sha(&out.join("fold0/checkpoint.json")),
        sha(&out.join("summary.json")),
    ];
    ok(&args);
    let second = [
        sha(&out.join("fold0/metrics.json")),
        sha(&out.join("fold0/checkpoint.json")),
        sha(&out.join("summary.json")),
    ];
    assert_eq!(first, second);
}

fn write_tiny_log(path: &Path) {
    let mut text = String::from("student_id,order_index,question_id,answer,concept_ids\n");
    for st in 0..5 {
        for t in 0..8 {
            let q = (st + t) % 3;
            let concept = if q == 2 { "ka" } else { "kb" };
            text.push_str(&format!("u{st},{t},p{q},{},{concept}\n", (st * t + q) % 2));
        }
    }
    fs::write(path, text).unwrap();
}

#[test]
fn assess_rows_and_zero_head_mastery() {
    let tmp = tempfile::tempdir().unwrap();
    let log = tmp.path().join("tiny.csv");
    write_tiny_log(&log);
    let out = tmp.path().join("t");
    let common = [
        "--set",
        "data.windows.min_len=5",
        "--set",
        "model={d=4, d_q=4, d_k=4, d_q_theta=4, d_k_theta=4, d_a=4, c_q=5, c_k=5, zero_mastery_head=true}",
    ];
    let mut args = vec!["train", "--log", s(&log), "--epochs", "0", "--out-dir", s(&out)];
    args.extend_from_slice(&common);
    ok(&args);
    let ckpt = out.join("fold0/checkpoint.json");
    let assessed = tmp.path().join("a");
    ok(&["assess", "--checkpoint", s(&ckpt), "--student", "u1", "--out-dir", s(&assessed)]);
    let text = fs::read_to_string(assessed.join("trajectory_u1.csv")).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# {"));
    assert_eq!(
        lines.next().unwrap(),
        "t,question_id,answer,concept_id,factual_mastery,counterfactual_mastery"
    );
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 8 * 2);
    for concept in ["ka", "kb"] {
        assert_eq!(rows.iter().filter(|r| r[3] == concept).count(), 8);
    }
    for r in &rows {
        assert_eq!(r[4], "0.5");
        assert_eq!(r[5], "0.5");
    }

    let unknown = cmkt(&["assess", "--checkpoint", s(&ckpt), "--student", "nobody", "--out-dir", s(&assessed)]);
    assert_eq!(code(&unknown), 2);
    assert!(stderr(&unknown).contains("nobody"));
}

#[test]
fn trained_assessment_separates_branches_and_eval_scores_truth() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    let log = small_log(&sim);
    let out = tmp.path().join("t");
    ok(&with_small(&["train", "--log", s(&log), "--epochs", "3", "--out-dir", s(&out)]));
    let ckpt = out.join("fold0/checkpoint.json");
    let assessed = tmp.path().join("a");
    ok(&["assess", "--checkpoint", s(&ckpt), "--student", "s0002", "--out-dir", s(&assessed)]);
    let text = fs::read_to_string(assessed.join("trajectory_s0002.csv")).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().skip(2).map(|l| l.split(',').collect()).collect();
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r[4] != r[5]));

    let ev = tmp.path().join("e");
    ok(&[
        "eval",
        "--checkpoint",
        s(&ckpt),
        "--truth",
        s(&sim.join("truth.csv")),
        "--out-dir",
        s(&ev),
    ]);
    let doc = json(&ev.join("eval.json"));
    assert!(doc["report"]["gaucm"].is_number());
    assert!(doc["truth"]["pooled"]["spearman"].is_number());
    let test_metrics = json(&out.join("fold0/metrics.json"));
    assert_eq!(doc["report"], test_metrics["test"]);
    let preds = fs::read_to_string(ev.join("predictions.csv")).unwrap();
    assert_eq!(preds.lines().next().unwrap(), "score,label,question_id,concept_id,student_id,t");
    assert!(ev.join("mastery_outcomes.csv").exists());
    assert!(ev.join("mastery.csv").exists());
}

#[test]
fn gradcheck_passes_and_catches_faults() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(&["gradcheck", "--out-dir", s(tmp.path())]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("worst slot"));
    let report = json(&tmp.path().join("gradcheck.json"));
    assert!(report["worst"]["max_rel_error"].as_f64().unwrap() < 1e-4);

    let faulty = cmkt(&["gradcheck", "--inject-fault", "state.forget_gate.weight"]);
    assert_eq!(code(&faulty), 3);
    assert!(stderr(&faulty).contains("state.forget_gate.weight"));

    assert_eq!(code(&cmkt(&["gradcheck", "--epsilon", "0"])), 1);
    assert_eq!(code(&cmkt(&["gradcheck", "--inject-fault", "nope"])), 1);
}
