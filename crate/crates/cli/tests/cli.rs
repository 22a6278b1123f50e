use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn emg2text(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_emg2text")).args(args).env("RUST_LOG", "warn").output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = emg2text(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn fails(args: &[&str]) -> String {
    let out = emg2text(args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    let err = String::from_utf8(out.stderr).unwrap();
    err.lines().last().unwrap_or_default().to_string()
}

/// A configuration small enough to run every command in seconds.
fn tiny_config(dir: &Path) -> String {
    let cfg = json!({
        "run_id": "tiny",
        "output_dir": dir.join("runs"),
        "seed": 7,
        "corpus": { "vocab_size": 6, "n_utterances": 40, "channels": 2, "words_per_utterance_mean": 2.0 },
        "split": { "ratios": [0.6, 0.2, 0.2] },
        "adaptor": { "input_dim": 28, "inner_dim": 16, "backbone_hidden": 8, "output_dim": 16 },
        "lm": {
            "model": { "embed_dim": 16, "layers": 1, "heads": 2, "ff_dim": 32, "max_len": 96 },
            "pretrain": { "epochs": 2, "extra_transcripts": 40 }
        },
        "train": { "lr_max": 0.003, "batch_size": 4, "max_epochs": 2, "val_wer_every": 1 },
        "decode": { "beam_width": 2 },
        "sweep": { "minutes": [0.05, 0.2] },
        "pid": {
            "corpus": { "vocab_size": 6, "n_utterances": 24, "n_speakers": 2, "channels": 2, "words_per_utterance_mean": 2.0 },
            "probe": { "probe_epochs": 5, "e2e_epochs": 1, "hidden": 8 }
        }
    });
    let path = dir.join("tiny.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

fn manifest(run: &Path, command: &str) -> Value {
    serde_json::from_str(&fs::read_to_string(run.join("manifests").join(format!("{command}.json"))).unwrap()).unwrap()
}

#[test]
fn print_config_round_trips_and_matches_reference() {
    let dir = tempfile::tempdir().unwrap();
    let printed = ok(&["--print-config", "gen"]);
    let path = dir.path().join("c.json");
    fs::write(&path, &printed).unwrap();
    assert_eq!(ok(&["--config", path.to_str().unwrap(), "--print-config", "train"]), printed);
    let reference = fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/reference.json")).unwrap();
    assert_eq!(printed, reference, "configs/reference.json is stale");
    let seeded = ok(&["--config", path.to_str().unwrap(), "--seed", "9", "--out", "/tmp/x", "--print-config", "gen"]);
    let v: Value = serde_json::from_str(&seeded).unwrap();
    assert_eq!(v["seed"], 9);
    assert_eq!(v["output_dir"], "/tmp/x");
}

#[test]
fn bad_configs_are_rejected_with_a_class() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    fs::write(&path, r#"{"bogus": 1}"#).unwrap();
    let line = fails(&["--config", path.to_str().unwrap(), "gen"]);
    assert!(line.starts_with("error[ConfigError]: ") && line.contains("bogus"), "{line}");
    fs::write(&path, r#"{"train": {"lr_max": 0.1, "momentum": 0.9}}"#).unwrap();
    assert!(fails(&["--config", path.to_str().unwrap(), "gen"]).contains("momentum"));
    fs::write(&path, r#"{"adaptor": {"output_dim": 32}}"#).unwrap();
    assert!(fails(&["--config", path.to_str().unwrap(), "gen"]).starts_with("error[ConfigError]"));
    let missing = dir.path().join("absent.json");
    assert!(fails(&["--config", missing.to_str().unwrap(), "gen"]).starts_with("error[IoError]"));
}

#[test]
fn missing_prerequisites_name_the_producing_command() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    for cmd in ["featurize", "pretrain-lm", "train", "eval", "ablate", "sweep", "pid"] {
        let line = fails(&["--config", &cfg, cmd]);
        assert!(line.starts_with("error[MissingPrerequisite]") && line.contains("emg2text gen"), "{cmd}: {line}");
    }
    ok(&["--config", &cfg, "gen"]);
    for cmd in ["train", "ablate", "sweep", "pid"] {
        let line = fails(&["--config", &cfg, cmd]);
        assert!(line.contains("emg2text pretrain-lm"), "{cmd}: {line}");
    }
    let line = fails(&["--config", &cfg, "eval"]);
    assert!(line.contains("emg2text train"), "{line}");
}

#[test]
fn full_pipeline_is_rerunnable_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let run = dir.path().join("runs/tiny");

    ok(&["--config", &cfg, "gen"]);
    let signals = fs::read_dir(run.join("corpus/signals")).unwrap().count();
    assert_eq!(signals, 40);
    let first = manifest(&run, "gen");
    assert_eq!(first["summary"]["utterances"], 40);
    assert!(fails(&["--config", &cfg, "gen"]).contains("--force"));
    ok(&["--config", &cfg, "--force", "gen"]);
    assert_eq!(manifest(&run, "gen")["files"], first["files"]);

    ok(&["--config", &cfg, "--jobs", "1", "featurize"]);
    ok(&["--config", &cfg, "pretrain-lm"]);
    ok(&["--config", &cfg, "train"]);
    let train = manifest(&run, "train");
    let files: Vec<&str> = train["files"].as_array().unwrap().iter().map(|f| f["path"].as_str().unwrap()).collect();
    for want in ["train/metrics.csv", "train/history_fold0.csv", "train/predictions_fold0_test.jsonl", "train/fold0/manifest.json"] {
        assert!(files.contains(&want), "{want} missing from {files:?}");
    }
    let metrics = fs::read_to_string(run.join("train/metrics.csv")).unwrap();
    assert!(metrics.starts_with("fold,split,wer,n_words,n_errors\n0,val,"));
    assert_eq!(train["config_hash"].as_str().unwrap().len(), 64);

    // Evaluating the saved checkpoint reproduces the training-time test WER.
    let out = ok(&["--config", &cfg, "eval"]);
    assert!(out.starts_with("eval: "));
    let eval = manifest(&run, "eval");
    assert_eq!(eval["summary"]["wer"], train["summary"]["folds"][0]["test_wer"]);
    ok(&["--config", &cfg, "--force", "eval", "--baseline", "oracle"]);
    assert_eq!(manifest(&run, "eval")["summary"]["wer"], 0.0);
    ok(&["--config", &cfg, "--force", "eval", "--baseline", "silent", "--split", "val"]);
    assert_eq!(manifest(&run, "eval")["summary"]["wer"], 1.0);

    ok(&["--config", &cfg, "ablate"]);
    let table = fs::read_to_string(run.join("ablate/ablation.csv")).unwrap();
    assert!(table.lines().count() >= 7, "{table}");
    assert!(run.join("ablate/ablation.txt").exists());

    ok(&["--config", &cfg, "sweep"]);
    let curve = fs::read_to_string(run.join("sweep/curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 3);

    ok(&["--config", &cfg, "pid"]);
    let pid: Value = serde_json::from_str(&fs::read_to_string(run.join("pid/report.json")).unwrap()).unwrap();
    assert_eq!(pid["n_speakers"], 2);

    // The same seed in a second directory gives byte-identical artifacts.
    let other = tempfile::tempdir().unwrap();
    let out = other.path().to_str().unwrap();
    for cmd in ["gen", "pretrain-lm", "train"] {
        ok(&["--config", &cfg, "--out", out, cmd]);
    }
    let again = manifest(&other.path().join("tiny"), "train");
    assert_eq!(again["files"], manifest(&run, "train")["files"]);
}
