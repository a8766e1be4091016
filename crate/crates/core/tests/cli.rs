use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use qppg::harness::{load_params, read_records, Summary};

fn qppg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qppg")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("exp.cfg");
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

const SMALL: &str = "# small run\nenv = quantum\nagent = qppg\nepisodes = 12\nseeds = 7, 8\nwidth = 8\neval_episodes = 4\n";

#[test]
fn repeated_training_gives_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let mut csvs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let o = qppg(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        csvs.push(fs::read(out.join("rewards.csv")).unwrap());
    }
    assert_eq!(csvs[0], csvs[1]);
    let text = String::from_utf8(csvs.remove(0)).unwrap();
    assert_eq!(text.lines().next(), Some("seed,episode,reward,moving_avg"));
    assert_eq!(text.lines().count(), 1 + 2 * 12);
}

#[test]
fn train_evaluate_report_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("run");
    let out_s = out.to_str().unwrap();
    let o = qppg(&["train", "--config", &cfg, "--out", out_s, "--seed", "3", "--format", "json"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("rewards.json").exists());

    let recs = read_records(&out.join("records.json")).unwrap();
    assert_eq!(recs.len(), 1);
    assert_eq!(recs[0].seed, 3);
    assert_eq!(recs[0].rewards.len(), 12);
    let (layout, params) = load_params(&out.join("params_seed3.bin")).unwrap();
    assert_eq!(layout.total(), params.len());

    let o = qppg(&["evaluate", "--config", &cfg, "--out", out_s, "--seed", "3", "--noise", "0.05"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let frac = v[0]["robustness"][0]["fraction"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&frac));

    let o = qppg(&["report", out_s]);
    assert!(o.status.success());
    let summary: Summary = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary.agents["qppg"].episodes_to_success.n, 1);
}

#[test]
fn capacity_command_reports_estimate() {
    let o = qppg(&["capacity", "--samples", "20000", "--seed", "1"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let mean = v["mean"].as_f64().unwrap();
    assert!(mean > 3.0 && mean < 7.0, "{mean}");
    assert!(v["stderr"].as_f64().unwrap() > 0.0);
}

#[test]
fn bad_inputs_fail_with_context() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "episodes = 3\nepisdoes = 4\n");
    let o = qppg(&["train", "--config", &cfg]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("exp.cfg") && err.contains("line 2"), "{err}");

    let o = qppg(&["report", dir.path().join("missing").to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing"));
}
