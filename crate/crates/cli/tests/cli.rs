use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn psample(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_psample")).current_dir(dir).args(args).output().unwrap()
}

fn workdir(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("psample-cli-{}-{name}", std::process::id()));
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn scene(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenes").join(name).to_string_lossy().into_owned()
}

fn error_kind(out: &Output) -> String {
    let line = String::from_utf8_lossy(&out.stderr).lines().last().unwrap_or_default().to_string();
    let v: serde_json::Value = serde_json::from_str(&line).unwrap_or_else(|_| panic!("not json: {line}"));
    v["error"].as_str().unwrap().to_string()
}

#[test]
fn unused_flag_is_a_usage_error() {
    let dir = workdir("usage");
    let out = psample(&dir, &["gen", "--scene", &scene("flat_lambertian.json"), "--out", "d.psmp", "--spp", "4"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.join("d.psmp").exists());
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn missing_input_is_a_runtime_error() {
    let dir = workdir("missing");
    let out = psample(&dir, &["inspect", "--model", "nope.psm"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!error_kind(&out).is_empty());
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn generated_dataset_can_be_inspected() {
    let dir = workdir("gen");
    let out = psample(&dir, &["gen", "--scene", &scene("flat_lambertian.json"), "--out", "d.psmp", "--count", "3000", "--seed", "4"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = psample(&dir, &["inspect", "--dataset", "d.psmp"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["kind"], "dataset");
    assert_eq!(v["records"], 9000);
    assert_eq!(v["seed"], 4);
    std::fs::remove_dir_all(dir).ok();
}
