use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const MANIFEST: &str = r#"{"sample_rate": 2000000.0, "f_tr": 0.8, "seed": 3, "classes": [
 {"class_id": 0, "name": "bg", "n_samples": 500000, "tones": [], "harmonics": [], "noise_floor_sigma": 0.1, "mains_residue_amp": 0.5},
 {"class_id": 1, "name": "dev", "n_samples": 500000, "tones": [{"freq_hz": 224200.0, "amplitude": 0.08, "drift_hz_per_s": 0.0}], "harmonics": [], "noise_floor_sigma": 0.1, "mains_residue_amp": 0.5}]}"#;

const CONFIG: &str = r#"{"manifest": "manifest.json", "n_explanations": 2, "n_retrainings": 2,
 "lime": {"n_samples": 20}, "train": {"epochs": 1, "train_set_size": 8, "val_set_size": 4}}"#;

struct Workspace {
    _tmp: tempfile::TempDir,
    dir: PathBuf,
}

impl Workspace {
    fn new() -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().to_path_buf();
        fs::write(dir.join("manifest.json"), MANIFEST).unwrap();
        fs::write(dir.join("config.json"), CONFIG).unwrap();
        Self { _tmp: tmp, dir }
    }

    fn out(&self) -> PathBuf {
        self.dir.join("out")
    }

    fn cmd(&self, args: &[&str]) -> Command {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_spectro-explain"));
        cmd.arg("--config").arg(self.dir.join("config.json")).arg("--out").arg(self.out()).args(args);
        cmd.env_remove("SPECTRO_EXPLAIN_SEED");
        cmd
    }

    fn run(&self, args: &[&str]) -> Output {
        self.cmd(args).output().unwrap()
    }

    fn ok(&self, args: &[&str]) -> Value {
        let out = self.run(args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        serde_json::from_slice(&out.stdout).unwrap()
    }
}

fn has_provenance(path: &Path) -> bool {
    String::from_utf8(read(path)).unwrap().lines().nth(1).is_some_and(|l| l.starts_with("<!-- provenance:"))
}

fn read(path: &Path) -> Vec<u8> {
    fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Checks the exit code and the JSON error object on stderr.
fn assert_error(out: &Output, code: i32) -> Value {
    assert_eq!(out.status.code(), Some(code), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let err: Value = serde_json::from_slice(&out.stderr).expect("stderr is one JSON object");
    assert_eq!(err["exit_code"], code);
    assert!(err["error"]["message"].as_str().is_some_and(|m| !m.is_empty()));
    err
}

#[test]
fn synth_is_deterministic_and_seed_sensitive() {
    let (a, b) = (Workspace::new(), Workspace::new());
    a.ok(&["synth"]);
    b.ok(&["synth"]);
    for c in 0..2 {
        let f = format!("signals/class_{c}.sig");
        assert_eq!(read(&a.out().join(&f)), read(&b.out().join(&f)));
    }
    assert_eq!(&read(&a.out().join("signals/class_1.sig"))[..4], b"SIG1");

    let summary = b.ok(&["synth", "--seed", "4"]);
    assert_eq!(summary["seed"], 4);
    assert_ne!(read(&a.out().join("signals/class_1.sig")), read(&b.out().join("signals/class_1.sig")));
}

#[test]
fn train_seed_changes_checkpoint_bytes() {
    let ws = Workspace::new();
    ws.ok(&["synth"]);
    ws.ok(&["train", "--seed", "1"]);
    ws.ok(&["train", "--seed", "2"]);
    let one = read(&ws.out().join("models/seed_1/model.mdl"));
    let two = read(&ws.out().join("models/seed_2/model.mdl"));
    assert_eq!(&one[..4], b"MDL1");
    assert_ne!(one, two);
    assert!(ws.out().join("models/seed_1/model.json").exists());
    let report: Value = serde_json::from_slice(&read(&ws.out().join("models/seed_1/report.json"))).unwrap();
    assert!(report["final_val_accuracy"].as_f64().is_some());
    assert!(has_provenance(&ws.out().join("models/seed_1/accuracy.svg")));

    // same seed in a fresh directory: identical bytes
    let again = Workspace::new();
    again.ok(&["synth"]);
    again.ok(&["train", "--seed", "1"]);
    assert_eq!(one, read(&again.out().join("models/seed_1/model.mdl")));
}

#[test]
fn missing_signals_is_bad_input() {
    let ws = Workspace::new();
    assert_error(&ws.run(&["train"]), 2);
}

#[test]
fn usage_and_config_errors_exit_2() {
    let ws = Workspace::new();
    assert_error(&ws.run(&["frobnicate"]), 2);
    assert_error(&ws.run(&["synth", "--jobs", "0"]), 2);

    fs::write(ws.dir.join("config.json"), r#"{"n_explanatons": 3}"#).unwrap();
    assert_error(&ws.run(&["synth"]), 2);

    let help = Command::new(env!("CARGO_BIN_EXE_spectro-explain")).arg("--help").output().unwrap();
    assert!(help.status.success());
}

#[test]
fn explain_rejects_unknown_class_and_honours_seed_env() {
    let ws = Workspace::new();
    ws.ok(&["synth"]);
    ws.ok(&["train"]);
    assert_error(&ws.run(&["explain", "--class", "9"]), 2);

    let summary = ws.ok(&["explain", "--class", "1"]);
    assert_eq!(summary["classes"][0]["n_explanations"], 2);
    let dir = ws.out().join("explain/seed_0/class_1");
    let first = read(&dir.join("expl_0000.exp"));
    assert_eq!(&first[..4], b"EXP1");
    for f in ["aggregate.spc", "projection.csv", "derivative.csv", "welch.csv", "derivative_welch.svg", "expl_0000.json"] {
        assert!(dir.join(f).exists(), "{f}");
    }
    let csv = String::from_utf8(read(&dir.join("derivative.csv"))).unwrap();
    assert_eq!(csv.lines().next(), Some("bin,freq_hz,value"));
    assert_eq!(csv.lines().count(), 1 + 223);

    // rerun with the same seed reuses identical artifacts
    ws.ok(&["explain", "--class", "1"]);
    assert_eq!(first, read(&dir.join("expl_0000.exp")));

    // a different explanation seed changes the sampled perturbations
    let out = ws.cmd(&["explain", "--class", "1"]).env("SPECTRO_EXPLAIN_SEED", "99").output().unwrap();
    assert!(out.status.success());
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["explain_seed"], 99);
    assert_ne!(first, read(&dir.join("expl_0000.exp")));

    let out = ws.cmd(&["explain"]).env("SPECTRO_EXPLAIN_SEED", "minus one").output().unwrap();
    assert_error(&out, 2);
}

#[test]
fn ensemble_and_report_write_their_artifacts() {
    let ws = Workspace::new();
    ws.ok(&["synth"]);
    let summary = ws.ok(&["ensemble", "--class", "1"]);
    assert_eq!(summary["classes"][0]["model_seeds"], serde_json::json!([0, 1]));
    let dir = ws.out().join("ensemble/class_1");
    let csv = String::from_utf8(read(&dir.join("ensemble.csv"))).unwrap();
    assert_eq!(csv.lines().next(), Some("bin,freq_hz,value,value_std"));
    for f in ["runs.csv", "summary.json", "runs.svg", "ensemble.svg"] {
        assert!(dir.join(f).exists(), "{f}");
    }
    assert!(ws.out().join("models/seed_1/model.mdl").exists());

    let report = ws.ok(&["report"]);
    let figures = report["index"]["figures"].as_array().unwrap();
    assert!(!figures.is_empty());
    assert!(ws.out().join("report/index.json").exists());
    for f in figures {
        let path = ws.out().join("report").join(f.as_str().unwrap());
        assert!(has_provenance(&path), "{}", path.display());
    }
}

#[test]
fn ensemble_needs_two_retrainings() {
    let ws = Workspace::new();
    fs::write(ws.dir.join("config.json"), CONFIG.replace("\"n_retrainings\": 2", "\"n_retrainings\": 1")).unwrap();
    ws.ok(&["synth"]);
    assert_error(&ws.run(&["ensemble"]), 2);
}
