//! Black-box tests of the `eds-slads` binary: exit codes, artifact layout,
//! and flag/env handling.

use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_eds-slads");

/// A config small enough that training plus sampling finishes in seconds.
const SMALL_CONFIG: &str = "\
n = 64
bins = 128
num_phases = 2
morphology = lamellae
stripe_width = 12
angle_deg = 30
ill_fraction = 0.01
stop_fraction = 0.10
train_images = 1
pairs_per_level = 60
det_draws = 12
cls_draws = 12
det_epochs = 40
cls_epochs = 25
seed = 3
";

fn run(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.args(args);
    cmd.env_remove("EDS_SLADS_OUT");
    cmd.env_remove("EDS_SLADS_THREADS");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn write_config(dir: &Path, contents: &str) -> String {
    let path = dir.join("exp.cfg");
    std::fs::write(&path, contents).expect("write config");
    path.to_string_lossy().into_owned()
}

#[test]
fn full_pipeline_and_artifacts() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let cfg = write_config(tmp.path(), SMALL_CONFIG);
    let run_dir = tmp.path().join("run");
    let out = run(&["run", "--config", &cfg, "--out", run_dir.to_str().unwrap()], &[]);
    assert!(
        out.status.success(),
        "run failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    for artifact in [
        "trace.csv",
        "truth.pgm",
        "recon.pgm",
        "mask.pgm",
        "distortion.pgm",
        "report.json",
        "detector.bin",
        "classifier.bin",
        "erd.bin",
        "library.bin",
        "config.txt",
    ] {
        assert!(run_dir.join(artifact).exists(), "missing artifact {artifact}");
    }
    let trace = std::fs::read_to_string(run_dir.join("trace.csv")).expect("trace");
    assert!(trace.starts_with("k,x,y,label,sigma2,td\n"), "trace header: {trace:.40}");

    // `report` summarizes the same directory.
    let out = run(&["report", "--run", run_dir.to_str().unwrap()], &[]);
    assert!(out.status.success(), "report failed");
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("run: 64x64"), "report summary: {stdout}");

    // `synth` recreates the object; `classify` applies the trained stack to it.
    let synth_dir = tmp.path().join("synth");
    let out = run(&["synth", "--config", &cfg, "--out", synth_dir.to_str().unwrap()], &[]);
    assert!(out.status.success(), "synth failed: {}", String::from_utf8_lossy(&out.stderr));
    let classify_dir = tmp.path().join("classified");
    let out = run(
        &[
            "classify",
            "--config",
            &cfg,
            "--detector",
            run_dir.join("detector.bin").to_str().unwrap(),
            "--classifier",
            run_dir.join("classifier.bin").to_str().unwrap(),
            "--object",
            synth_dir.join("object").to_str().unwrap(),
            "--out",
            classify_dir.to_str().unwrap(),
        ],
        &[],
    );
    assert!(out.status.success(), "classify failed: {}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(classify_dir.join("classification.json")).unwrap())
            .expect("summary parses");
    assert_eq!(summary["n"], 64);
    let rate = summary["misclassification_rate"].as_f64().expect("rate");
    assert!(rate < 0.05, "per-pixel misclassification {rate} unexpectedly high");
    assert!(classify_dir.join("labels.pgm").exists());
}

#[test]
fn config_errors_exit_with_code_2() {
    let tmp = tempfile::tempdir().expect("tempdir");
    // Misspelled key.
    let cfg = write_config(tmp.path(), "stop_fractoin = 0.2\n");
    let out = run(&["run", "--config", &cfg, "--out", tmp.path().join("a").to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(2), "unknown key must be a config error");
    assert!(String::from_utf8_lossy(&out.stderr).contains("stop_fractoin"));

    // Missing file.
    let out = run(
        &["run", "--config", "/nonexistent/exp.cfg", "--out", tmp.path().join("b").to_str().unwrap()],
        &[],
    );
    assert_eq!(out.status.code(), Some(2), "missing config must be a config error");

    // Invalid thread override.
    let cfg = write_config(tmp.path(), SMALL_CONFIG);
    let out = run(
        &["synth", "--config", &cfg, "--out", tmp.path().join("c").to_str().unwrap()],
        &[("EDS_SLADS_THREADS", "lots")],
    );
    assert_eq!(out.status.code(), Some(2), "garbage thread count must be a config error");
}

#[test]
fn training_failure_exits_with_code_3() {
    let tmp = tempfile::tempdir().expect("tempdir");
    // One epoch at a vanishing learning rate leaves the detector at its
    // random init, far above the validation residual bar.
    let crippled = SMALL_CONFIG
        .replace("det_epochs = 40", "det_epochs = 1\ndet_learning_rate = 0.000000001");
    let cfg = write_config(tmp.path(), &crippled);
    let out = run(
        &["train-classifier", "--config", &cfg, "--out", tmp.path().join("t").to_str().unwrap()],
        &[],
    );
    assert_eq!(
        out.status.code(),
        Some(3),
        "an untrained detector cannot meet the validation residual: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn seed_flag_overrides_config_and_env_sets_out_dir() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let cfg = write_config(tmp.path(), SMALL_CONFIG);
    let env_out = tmp.path().join("from-env");
    let out = run(
        &["synth", "--config", &cfg, "--seed", "99"],
        &[("EDS_SLADS_OUT", env_out.to_str().unwrap())],
    );
    assert!(out.status.success(), "synth failed: {}", String::from_utf8_lossy(&out.stderr));
    let echo = std::fs::read_to_string(env_out.join("config.txt")).expect("config echo");
    assert!(echo.contains("seed = 99"), "echoed config must carry the overridden seed: {echo}");
}
