mod common;

use std::path::Path;
use std::process::{Command, Output};

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_attr2face")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn unknown_verb_and_flag_fail() {
    let o = cli(&["paint"]);
    assert!(!o.status.success());
    let o = cli(&["synthesize", "--colour", "red"]);
    assert!(!o.status.success());
    assert!(!stderr(&o).is_empty());
}

#[test]
fn evaluate_names_a_missing_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("nowhere.ckpt");
    let o = cli(&["evaluate", "--checkpoint", s(&ckpt), "--data", s(dir.path()), "--predictor", s(&dir.path().join("p.ckpt"))]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains(s(&ckpt)), "{}", stderr(&o));
}

#[test]
fn synthesize_is_reproducible_on_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("m.ckpt");
    common::random_model(&ckpt);
    let run = |out: &Path| {
        let o = cli(&["synthesize", "--checkpoint", s(&ckpt), "--out", s(out), "--count", "4", "--seed", "11", "--attr", "smiling=1", "--return-sketch"]);
        assert!(o.status.success(), "{}", stderr(&o));
        let mut files: Vec<_> = std::fs::read_dir(out).unwrap().map(|e| e.unwrap().path()).collect();
        files.sort();
        files
    };
    let a = run(&dir.path().join("a"));
    let b = run(&dir.path().join("b"));
    assert_eq!(a.len(), 8);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.file_name(), y.file_name());
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
    }
    let o = cli(&["synthesize", "--checkpoint", s(&ckpt), "--out", s(&dir.path().join("c")), "--attr", "Mustache=1"]);
    assert!(!o.status.success());
}

#[test]
fn dataset_to_training_to_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let o = cli(&["make-synthetic", "--out", s(&data), "--n", "30", "--seed", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));

    let cache = dir.path().join("train.cache");
    let o = cli(&["prepare", "--data", s(&data), "--out", s(&cache)]);
    assert!(o.status.success(), "{}", stderr(&o));

    let run = dir.path().join("run");
    let o = cli(&["train", "--data", s(&cache), "--out", s(&run), "--smoke", "--max-steps", "2", "--checkpoint-every", "1", "--scales", "16,32,64"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(run.join("config.toml").exists() && run.join("final.ckpt").exists() && run.join("step-000001.ckpt").exists());
    let metrics = std::fs::read_to_string(run.join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 2);

    // resuming under a different configuration is refused
    let o = cli(&[
        "train", "--data", s(&cache), "--out", s(&run), "--smoke", "--max-steps", "3",
        "--resume", s(&run.join("step-000001.ckpt")), "--lr-stage1", "0.001",
    ]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("config hash mismatch"), "{}", stderr(&o));

    let predictor = dir.path().join("predictor.ckpt");
    let o = cli(&["train-predictor", "--data", s(&data), "--out", s(&predictor), "--epochs", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));

    let report = dir.path().join("report.txt");
    let o = cli(&[
        "evaluate", "--checkpoint", s(&run.join("final.ckpt")), "--data", s(&data), "--predictor", s(&predictor),
        "--n-samples", "4", "--extractor", "pixels8", "--out", s(&report),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&report).unwrap();
    for key in ["fid=", "attribute_l2.mean=", "attribute_l2.std=", "predictor_hash=", "model_hash=", "NON-COMPARABLE"] {
        assert!(text.contains(key), "report lacks {key}:\n{text}");
    }

    let o = cli(&["evaluate", "--oracle", "--data", s(&data), "--predictor", s(&predictor), "--n-samples", "6", "--extractor", "pixels8"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("oracle=true"));
}
