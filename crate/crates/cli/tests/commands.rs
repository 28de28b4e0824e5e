use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn wrht(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wrht")).args(args).output().expect("binary runs")
}

fn json(args: &[&str]) -> Value {
    let out = wrht(args);
    assert!(out.status.success(), "wrht {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("valid JSON")
}

fn write(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let path = dir.path().join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn num(v: &Value, key: &str) -> f64 {
    v[key].as_f64().unwrap_or_else(|| panic!("{key} missing in {v}"))
}

fn grid_csv(offset: f64) -> String {
    (0..12).map(|i| format!("{},{}\n", offset + (i % 4) as f64 * 0.2, (i / 4) as f64 * 0.2)).collect()
}

#[test]
fn solve_two_atoms() {
    let dir = TempDir::new().unwrap();
    let q1 = write(&dir, "q1.csv", "0.0\n");
    let q2 = write(&dir, "q2.csv", "1.0\n");
    let v = json(&["solve", s(&q1), s(&q2), "--family", "exp", "--theta", "0.25"]);
    assert!((num(&v, "objective") - 3f64.sqrt()).abs() < 1e-4, "{v}");
    for key in ["objective", "divergence", "fw_gap", "iterations", "theta", "family", "p1", "p2", "support", "phi"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert_eq!(v["theta"], serde_json::json!([0.25, 0.25]));
    assert_eq!(v["family"], "exp");
    assert_eq!(v["support"], serde_json::json!([[0.0], [1.0]]));
}

#[test]
fn identical_samples_without_radius_have_zero_divergence() {
    let dir = TempDir::new().unwrap();
    let q = write(&dir, "q.csv", "0.5,1\n-1,2\n3,0\n");
    for family in ["exp", "log", "quad", "hinge"] {
        let v = json(&["solve", s(&q), s(&q), "--family", family, "--theta", "0"]);
        assert!(num(&v, "divergence").abs() < 1e-9, "{family}: {v}");
    }
}

#[test]
fn malformed_input_exits_with_code_2() {
    let dir = TempDir::new().unwrap();
    let good = write(&dir, "good.csv", "0,1\n1,1\n");
    let cases = [
        ("ragged.csv", "0,1\n1,2,3\n", "row 2"),
        ("word.csv", "0,1\n1,abc\n", "abc"),
        ("empty.csv", "", "no samples"),
    ];
    for (name, text, needle) in cases {
        let bad = write(&dir, name, text);
        let out = wrht(&["solve", s(&bad), s(&good)]);
        assert_eq!(out.status.code(), Some(2), "{name}");
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains(needle), "{name}: {err}");
        assert!(out.stdout.is_empty());
    }
    let out = wrht(&["solve", "/nonexistent/q1.csv", s(&good)]);
    assert_eq!(out.status.code(), Some(2));
    let out = wrht(&["solve", s(&good), s(&good), "--family", "cubic"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn header_rows_are_skipped_on_request() {
    let dir = TempDir::new().unwrap();
    let q1 = write(&dir, "q1.csv", "x,y\n0,1\n");
    let q2 = write(&dir, "q2.csv", "x,y\n1,1\n");
    let v = json(&["solve", s(&q1), s(&q2), "--header", "--theta", "0"]);
    assert_eq!(v["support"], serde_json::json!([[0.0, 1.0], [1.0, 1.0]]));
    assert_eq!(wrht(&["solve", s(&q1), s(&q2)]).status.code(), Some(2));
}

#[test]
fn baseline_statistics() {
    let dir = TempDir::new().unwrap();
    // Mean 0 and identity sample covariance.
    let a = 1.5f64.sqrt();
    let train = write(&dir, "train.csv", &format!("{a},0\n-{a},0\n0,{a}\n0,-{a}\n"));
    let stream = write(&dir, "stream.csv", "3,4\n0,0\n");
    let v = json(&["baseline", s(&train), s(&stream), "--ridge", "0", "--threshold", "30"]);
    let stats: Vec<f64> = v["per_step_stat"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    assert!((stats[0] - 25.0).abs() < 1e-9, "{stats:?}");
    assert!(stats[1].abs() < 1e-12);
    assert_eq!(v["method"], "hotelling");
    assert!(v["alarm_time"].is_null());

    let at_mean = write(&dir, "mean.csv", "0,0\n0,0\n0,0\n");
    let v = json(&["baseline", s(&train), s(&at_mean), "--threshold", "0.5"]);
    assert!(v["per_step_stat"].as_array().unwrap().iter().all(|x| x.as_f64().unwrap().abs() < 1e-12));
    assert!(v["alarm_time"].is_null());
}

#[test]
fn singular_baseline_without_ridge_exits_with_code_2() {
    let dir = TempDir::new().unwrap();
    let train = write(&dir, "train.csv", "0,0\n1,1\n2,2\n3,3\n");
    let stream = write(&dir, "stream.csv", "1,0\n");
    let out = wrht(&["baseline", s(&train), s(&stream), "--ridge", "0", "--threshold", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ridge"));
    assert!(wrht(&["baseline", s(&train), s(&stream), "--ridge", "0.1", "--threshold", "1"]).status.success());
}

#[test]
fn detect_on_training_points_and_with_truth() {
    let dir = TempDir::new().unwrap();
    let pre = grid_csv(0.0);
    let post = grid_csv(3.0);
    let q1 = write(&dir, "q1.csv", &pre);
    let q2 = write(&dir, "q2.csv", &post);
    let quiet = write(&dir, "quiet.csv", &pre);
    let v = json(&["detect", s(&quiet), "--q1", s(&q1), "--q2", s(&q2), "--theta", "0.1", "--threshold", "1"]);
    assert!(v["alarm_time"].is_null(), "{v}");
    assert_eq!(v["method"], "robust-cusum");
    assert_eq!(v["per_step_stat"].as_array().unwrap().len(), 12);

    let changing = write(&dir, "changing.csv", &format!("{pre}{post}"));
    let v = json(&["detect", s(&changing), "--q1", s(&q1), "--q2", s(&q2), "--theta", "0.1", "--threshold", "2", "--truth", "12"]);
    assert_eq!(v["truth_change_time"], 12);
    assert_eq!(v["false_alarm"], false);
    let delay = v["delay"].as_u64().expect("delay populated");
    assert_eq!(v["alarm_time"].as_u64().unwrap(), 12 + delay);

    // A saved model gives the same chart.
    let model = dir.path().join("model.txt");
    json(&["solve", s(&q1), s(&q2), "--theta", "0.1", "--model-out", s(&model)]);
    assert!(std::fs::read_to_string(&model).unwrap().starts_with("wrht-detector v1\n"));
    let w = json(&["detect", s(&changing), "--model", s(&model), "--threshold", "2", "--truth", "12"]);
    assert_eq!(w["per_step_stat"], v["per_step_stat"]);
    assert_eq!(w["delay"], v["delay"]);
}

#[test]
fn calibrate_outputs() {
    let dir = TempDir::new().unwrap();
    let constant = write(&dir, "constant.csv", &"2.0,-1.0\n".repeat(50));
    let v = json(&["calibrate", s(&constant), "--set", "bootstrap_reps=5"]);
    assert_eq!(num(&v, "theta"), v["theta_grid"][0].as_f64().unwrap());
    assert_eq!(v["seed"], 0);

    let spread: String = (0..60).map(|i| format!("{}\n", ((i * 37) % 60) as f64 / 30.0 - 1.0)).collect();
    let data = write(&dir, "spread.csv", &spread);
    let v = json(&["calibrate", s(&data), "--set", "bootstrap_reps=10", "--seed", "4"]);
    let curve: Vec<f64> = v["quantile_curve"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    assert_eq!(curve.len(), v["theta_grid"].as_array().unwrap().len());
    assert!(curve.windows(2).all(|w| w[1] <= w[0] + 1e-6), "{curve:?}");
    assert_eq!(v["seed"], 4);
}

#[test]
fn config_file_values_are_overridden_by_flags() {
    let dir = TempDir::new().unwrap();
    let q1 = write(&dir, "q1.csv", "0.0\n");
    let q2 = write(&dir, "q2.csv", "1.0\n");
    let cfg = write(&dir, "run.cfg", "# two-atom run\nfamily = exp\ntheta = 0.4\n");
    let v = json(&["solve", s(&q1), s(&q2), "--config", s(&cfg)]);
    assert!((num(&v, "objective") - 4.0 * (0.4f64 * 0.6).sqrt()).abs() < 1e-4);
    let v = json(&["solve", s(&q1), s(&q2), "--config", s(&cfg), "--theta", "0.25"]);
    assert!((num(&v, "objective") - 3f64.sqrt()).abs() < 1e-4);
    let bad = write(&dir, "bad.cfg", "colour = blue\n");
    assert_eq!(wrht(&["solve", s(&q1), s(&q2), "--config", s(&bad)]).status.code(), Some(2));
}

#[test]
fn json_reports_round_trip() {
    let dir = TempDir::new().unwrap();
    let q1 = write(&dir, "q1.csv", &grid_csv(0.0));
    let q2 = write(&dir, "q2.csv", &grid_csv(0.7));
    let out = wrht(&["solve", s(&q1), s(&q2), "--family", "log", "--theta", "0.05"]);
    assert!(out.status.success());
    let first: Value = serde_json::from_slice(&out.stdout).unwrap();
    let again = wrht_cli::io::to_json(&first).unwrap();
    let second: Value = serde_json::from_str(&again).unwrap();
    assert_eq!(first, second);
    assert_eq!(wrht_cli::io::to_json(&second).unwrap(), again);
}

#[test]
fn simulate_reports_every_alpha_for_both_methods() {
    let v = json(&["simulate", "--runs", "6", "--alphas", "0.01,0.05,0.1", "--set", "threshold_reps=50", "--theta", "0.2"]);
    let results = v["results"].as_array().unwrap();
    assert_eq!(results.len(), 3);
    for r in results {
        for method in ["robust", "hotelling"] {
            assert!(r[method]["type1_rate"].is_number(), "{r}");
            assert_eq!(r[method]["delays"].as_array().unwrap().len(), 6);
        }
    }
}

#[test]
fn default_scenario_detects_every_change_with_the_robust_chart() {
    let v = json(&["simulate"]);
    for r in v["results"].as_array().unwrap() {
        let delays = r["robust"]["delays"].as_array().unwrap();
        assert_eq!(delays.len(), 100);
        assert!(delays.iter().all(|d| d.is_u64()), "alpha {}: missing delay", r["alpha"]);
    }
}

#[test]
fn streams_can_be_written_out() {
    let dir = TempDir::new().unwrap();
    let streams = dir.path().join("streams");
    json(&["simulate", "--runs", "2", "--set", "threshold_reps=20", "--theta", "0.2", "--streams-dir", s(&streams)]);
    let text = std::fs::read_to_string(streams.join("run_0001.csv")).unwrap();
    assert_eq!(text.lines().count(), 400);
}
