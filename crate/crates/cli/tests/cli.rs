use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/fixtures")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn lmkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lmkit"))
        .arg("--quiet")
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn error_line(out: &Output) -> Value {
    let text = stderr(out);
    let last = text.lines().last().expect("stderr has an error line");
    serde_json::from_str(last).expect("last stderr line is JSON")
}

fn ok(args: &[&str]) -> Value {
    let out = lmkit(args);
    assert!(out.status.success(), "{args:?}: {}", stderr(&out));
    serde_json::from_slice(&out.stdout).expect("stdout is a JSON report")
}

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    /// Vocabulary and a one-layer checkpoint trained for one epoch.
    fn new() -> Self {
        let ws = Workspace {
            dir: tempfile::tempdir().unwrap(),
        };
        std::fs::write(
            ws.path("model.json"),
            r#"{"num_layers":1,"num_heads":2,"hidden_size":16,"ffn_size":32,"vocab_size":0,"max_sequence_length":32,"type_vocab_size":2,"dropout_rate":0.0}"#,
        )
        .unwrap();
        let all = std::fs::read_to_string(fixture("ner_fixture.jsonl")).unwrap();
        let docs: Vec<&str> = all.lines().take(2).collect();
        std::fs::write(ws.path("ner2.jsonl"), docs.join("\n") + "\n").unwrap();
        ok(&["train-tokenizer", "--corpus", &ws.path("ner2.jsonl"), "--vocab-size", "300", "--out", &ws.path("vocab.txt")]);
        ok(&[
            "pretrain", "--strategy", "SC", "--corpus", &ws.path("ner2.jsonl"), "--vocab", &ws.path("vocab.txt"), "--model-config",
            &ws.path("model.json"), "--epochs", "1", "--batch-size", "8", "--out-dir", &ws.path("sc"),
        ]);
        ws
    }

    fn path(&self, name: &str) -> String {
        self.dir.path().join(name).to_string_lossy().into_owned()
    }
}

#[test]
fn train_tokenizer_writes_vocab_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("vocab.txt");
    let report = ok(&["train-tokenizer", "--corpus", &fixture("toy_corpus.jsonl"), "--vocab-size", "300", "--out", out.to_str().unwrap()]);
    assert_eq!(report["documents"], 50);
    let vocab = std::fs::read_to_string(&out).unwrap();
    assert_eq!(vocab.lines().next(), Some("[PAD]"));
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("vocab.txt.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "train-tokenizer");
    assert_eq!(manifest["seed"], 42);
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 1);
    assert_eq!(manifest["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
    assert!(manifest["config_hash"].is_string());
}

#[test]
fn further_pretraining_needs_init_checkpoint() {
    let out = lmkit(&["pretrain", "--strategy", "FP", "--corpus", &fixture("toy_corpus.jsonl"), "--vocab", "v.txt", "--out-dir", "x"]);
    assert_eq!(out.status.code(), Some(1));
    let err = error_line(&out);
    assert_eq!(err["error"], "config");
    assert!(err["message"].as_str().unwrap().contains("--init-checkpoint"));
}

#[test]
fn unknown_flag_or_subcommand_is_usage_error() {
    let out = lmkit(&["train-tokenizer", "--bogus", "1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("Usage"));
    assert_eq!(error_line(&out)["error"], "usage");
    let out = lmkit(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_line(&out)["error"], "usage");
}

#[test]
fn help_and_version_succeed() {
    let out = lmkit(&["--help"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("grid-search"));
    let out = lmkit(&["--version"]);
    assert!(out.status.success());
}

#[test]
fn malformed_input_is_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, b"{\"doc_id\": \"a\", \"text\": \"x\"}\n{not json\n").unwrap();
    let out = lmkit(&["train-tokenizer", "--corpus", bad.to_str().unwrap(), "--vocab-size", "50", "--out", dir.path().join("v.txt").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
}

#[test]
fn missing_input_file_reports_json_error() {
    let out = lmkit(&["train-tokenizer", "--corpus", "/nonexistent/c.jsonl", "--vocab-size", "50", "--out", "/tmp/never.txt"]);
    assert!(!out.status.success());
    assert_eq!(error_line(&out)["error"], "io");
}

#[test]
fn reference_grid_logs_54_trials() {
    let ws = Workspace::new();
    let ner = ws.path("ner2.jsonl");
    let report = ok(&[
        "grid-search", "--task", "ner", "--space", "reference", "--train", &ner, "--validation", &ner, "--vocab", &ws.path("vocab.txt"),
        "--init-checkpoint", &ws.path("sc/latest.ckpt"), "--max-seq-len", "32", "--out-dir", &ws.path("grid"),
    ]);
    let log = std::fs::read_to_string(ws.path("grid/trials.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 54);
    let best: Value = serde_json::from_str(&std::fs::read_to_string(ws.path("grid/best_config.json")).unwrap()).unwrap();
    assert!(best["learning_rate"].is_number());
    assert!(report.is_object());
    assert!(!log.contains("wall_time"));
}

#[test]
fn subset_limits_grid() {
    let ws = Workspace::new();
    let ner = ws.path("ner2.jsonl");
    ok(&[
        "grid-search", "--task", "ner", "--subset", "3", "--train", &ner, "--validation", &ner, "--vocab", &ws.path("vocab.txt"),
        "--init-checkpoint", &ws.path("sc/latest.ckpt"), "--max-seq-len", "32", "--out-dir", &ws.path("grid"),
    ]);
    let log = std::fs::read_to_string(ws.path("grid/trials.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 3);
}

#[test]
fn config_file_overrides_flags() {
    let ws = Workspace::new();
    std::fs::write(ws.path("cfg.json"), r#"{"learning_rate": 0.002, "epochs": 1}"#).unwrap();
    let report = ok(&[
        "pretrain", "--strategy", "FP", "--corpus", &ws.path("ner2.jsonl"), "--vocab", &ws.path("vocab.txt"), "--init-checkpoint",
        &ws.path("sc/latest.ckpt"), "--epochs", "3", "--learning-rate", "0.1", "--config", &ws.path("cfg.json"), "--out-dir", &ws.path("fp"),
    ]);
    assert_eq!(report["config"]["learning_rate"], 0.002);
    assert_eq!(report["config"]["epochs"], 1);
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(ws.path("fp/manifest.json")).unwrap()).unwrap();
    let args: Vec<&str> = manifest["args"].as_array().unwrap().iter().map(|a| a.as_str().unwrap()).collect();
    assert!(!args.contains(&"--config"));
    assert!(args.windows(2).any(|w| w == ["--learning-rate", "0.002"]));
}

#[test]
fn commands_do_not_mutate_inputs() {
    let ws = Workspace::new();
    let inputs = [ws.path("ner2.jsonl"), ws.path("vocab.txt"), ws.path("sc/latest.ckpt")];
    let before: Vec<Vec<u8>> = inputs.iter().map(|p| std::fs::read(p).unwrap()).collect();
    ok(&[
        "finetune-ner", "--train", &inputs[0], "--vocab", &inputs[1], "--init-checkpoint", &inputs[2], "--epochs", "1", "--max-seq-len", "32",
        "--out-dir", &ws.path("ner"),
    ]);
    let after: Vec<Vec<u8>> = inputs.iter().map(|p| std::fs::read(p).unwrap()).collect();
    assert_eq!(before, after);
}

#[test]
fn replay_detects_changed_inputs_and_outputs() {
    let ws = Workspace::new();
    let manifest = ws.path("sc/manifest.json");
    ok(&["replay", "--manifest", &manifest]);

    let mut m: Value = serde_json::from_str(&std::fs::read_to_string(&manifest).unwrap()).unwrap();
    m["outputs"][0]["sha256"] = Value::String("0".repeat(64));
    let tampered = ws.path("tampered.json");
    std::fs::write(&tampered, serde_json::to_vec(&m).unwrap()).unwrap();
    let out = lmkit(&["replay", "--manifest", &tampered]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_line(&out)["error"], "replay-mismatch");

    let corpus = PathBuf::from(ws.path("ner2.jsonl"));
    let mut text = std::fs::read_to_string(&corpus).unwrap();
    text.push_str("{\"doc_id\": \"extra\", \"text\": \"one more\"}\n");
    std::fs::write(&corpus, text).unwrap();
    let out = lmkit(&["replay", "--manifest", &manifest]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_line(&out)["error"], "input-contract");
}

#[test]
fn same_seed_same_bytes_different_seed_different_bytes() {
    let ws = Workspace::new();
    let run = |seed: &str, out: &str| {
        ok(&[
            "--seed", seed, "pretrain", "--strategy", "SC", "--corpus", &ws.path("ner2.jsonl"), "--vocab", &ws.path("vocab.txt"),
            "--model-config", &ws.path("model.json"), "--epochs", "1", "--batch-size", "8", "--out-dir", &ws.path(out),
        ]);
        std::fs::read(ws.path(&format!("{out}/latest.ckpt"))).unwrap()
    };
    let a = run("42", "a");
    let b = run("42", "b");
    let c = run("7", "c");
    assert_eq!(a, b);
    assert_ne!(a, c);
}
