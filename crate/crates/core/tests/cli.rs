//! End-to-end checks of the installed binary: exit codes, error wording,
//! artifact presence, and byte-level determinism of repeated runs.

use std::path::Path;
use std::process::Command;

fn flowcast() -> Command {
    Command::new(env!("CARGO_BIN_EXE_flowcast"))
}

const MICRO_CONFIG: &str = "\
seed = 11
data.length = 320
data.base_period = 16
data.regime_count = 2
data.spike_rate = 0.3
data.m = 16
data.n = 2
model.scales = 2
model.d_m = 8
model.d_k = 16
model.heads = 2
model.d_ff = 32
model.e_layers = 1
train.batch_size = 32
train.max_epochs = 3
train.patience = 3
";

fn write_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("run.conf");
    std::fs::write(&path, MICRO_CONFIG).unwrap();
    path
}

#[test]
fn full_pipeline_produces_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("out");

    for args in [
        vec!["generate"],
        vec!["train"],
        vec!["analyze"],
    ] {
        let status = flowcast()
            .args(&args)
            .arg("--config")
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .status()
            .unwrap();
        assert!(status.success(), "{args:?} failed");
    }
    let ckpt = out.join("model.json");
    let status = flowcast()
        .args(["evaluate", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .arg("--checkpoint")
        .arg(&ckpt)
        .status()
        .unwrap();
    assert!(status.success(), "evaluate failed");

    for f in [
        "dataset.csv",
        "model.json",
        "history.csv",
        "metrics.csv",
        "period.txt",
        "coverage.csv",
        "config.resolved",
    ] {
        assert!(out.join(f).exists(), "missing artifact {f}");
    }
    assert_eq!(
        std::fs::read_to_string(out.join("period.txt")).unwrap(),
        "16\n"
    );
}

#[test]
fn repeated_training_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let status = flowcast()
            .args(["train", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success());
    }
    let ha = std::fs::read(a.join("history.csv")).unwrap();
    let hb = std::fs::read(b.join("history.csv")).unwrap();
    assert_eq!(ha, hb, "same seed must reproduce the same history bytes");
    let ca = std::fs::read(a.join("model.json")).unwrap();
    let cb = std::fs::read(b.join("model.json")).unwrap();
    assert_eq!(ca, cb, "same seed must reproduce the same checkpoint bytes");
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for (out, seed) in [(&a, "11"), (&b, "12")] {
        let status = flowcast()
            .args(["generate", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(out)
            .args(["--seed", seed])
            .status()
            .unwrap();
        assert!(status.success());
    }
    let da = std::fs::read(a.join("dataset.csv")).unwrap();
    let db = std::fs::read(b.join("dataset.csv")).unwrap();
    assert_ne!(da, db);
    // The echo records the override.
    let echo = std::fs::read_to_string(b.join("config.resolved")).unwrap();
    assert!(echo.contains("seed = 12"));
}

#[test]
fn corrupt_csv_row_exits_2_and_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("bad.csv");
    std::fs::write(
        &data,
        "timestamp,count\n2024-01-01T00:00,5.0\n2024-01-01T00:30,oops\n",
    )
    .unwrap();
    let cfg = dir.path().join("run.conf");
    std::fs::write(
        &cfg,
        format!(
            "data.source = csv\ndata.csv_path = {}\ndata.m = 16\ndata.n = 2\n\
             model.scales = 2\nmodel.d_m = 8\nmodel.d_k = 16\nmodel.heads = 2\n\
             model.d_ff = 32\nmodel.e_layers = 1\n",
            data.display()
        ),
    )
    .unwrap();
    let out = flowcast()
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("line 3"), "stderr was: {stderr}");
    assert_eq!(stderr.lines().count(), 1, "single-line error expected");
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.conf");
    std::fs::write(&cfg, "model.depth = 3\n").unwrap();
    let out = flowcast()
        .args(["generate", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("model.depth"), "stderr was: {stderr}");
}

#[test]
fn missing_checkpoint_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = flowcast()
        .args(["evaluate", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("out"))
        .arg("--checkpoint")
        .arg(dir.path().join("absent.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("absent.json"), "stderr was: {stderr}");
}
