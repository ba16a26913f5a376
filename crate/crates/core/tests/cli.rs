mod common;

use std::process::{Command, Output};

fn redpanda(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_redpanda")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn missing_config_fails_with_path() {
    let out = redpanda(&["generate", "--config", "/nonexistent/x.ini"]);
    assert!(!out.status.success());
    let err = stderr(&out);
    assert!(err.starts_with("error: ") && err.contains("/nonexistent/x.ini"), "{err}");
}

#[test]
fn unknown_mode_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = common::write_toy_config(tmp.path());
    let out = redpanda(&["train", "--config", cfg.to_str().unwrap(), "--mode", "dcodr", "--seed", "0"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("dcodr"));
}

#[test]
fn train_before_generate_names_the_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = common::write_toy_config(tmp.path());
    let out = redpanda(&["train", "--config", cfg.to_str().unwrap(), "--mode", "redpanda", "--seed", "0"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("manifest.csv"), "{}", stderr(&out));
}

#[test]
fn generate_is_idempotent() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = common::write_toy_config(tmp.path());
    let first = redpanda(&["generate", "--config", cfg.to_str().unwrap()]);
    assert!(first.status.success(), "{}", stderr(&first));
    let second = redpanda(&["generate", "--config", cfg.to_str().unwrap()]);
    let (a, b) = (String::from_utf8_lossy(&first.stdout), String::from_utf8_lossy(&second.stdout));
    assert!(a.starts_with("wrote ") && b.starts_with("reused "), "{a}\n{b}");
    let hash = |s: &str| s.lines().find(|l| l.starts_with("dataset_hash=")).map(str::to_owned);
    assert_eq!(hash(&a), hash(&b));
    assert!(hash(&a).is_some());
}
