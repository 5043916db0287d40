use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use leakgraph::enumeration::{cache_path, Constraints};
use leakgraph::Topology;
use serde_json::Value;

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn topology() -> PathBuf {
    data_dir().join("four_zone.json")
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_leakgraph")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr_line(out: &Output) -> String {
    let text = String::from_utf8_lossy(&out.stderr).to_string();
    assert_eq!(text.trim_end().lines().count(), 1, "stderr: {text}");
    text.trim_end().to_string()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn csv_rows(p: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(p)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

/// Writes hourly samples for one day with the given per-sensor residuals.
fn write_residual_csv(path: &Path, residuals: &[f64]) {
    let mut text = String::from("timestamp,sensor_id,measured,predicted,quality\n");
    for h in 0..24 {
        for (i, r) in residuals.iter().enumerate() {
            text.push_str(&format!("2024-03-01T{h:02}:00:00,{},{},10,ok\n", i + 1, 10.0 + r));
        }
    }
    fs::write(path, text).unwrap();
}

#[test]
fn detect_reports_verdict_in_exit_code() {
    let ok = run(&["--topology", s(&topology()), "detect", "--faults", "L3,D3"]);
    assert_eq!(ok.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&ok.stdout).unwrap();
    assert_eq!(v["detectable"], true);

    let six = data_dir().join("six_zone.json");
    let bad = run(&["--topology", s(&six), "detect", "--faults", "L3,L5,D3,D4,D5"]);
    assert_eq!(bad.status.code(), Some(2));
    let v: Value = serde_json::from_slice(&bad.stdout).unwrap();
    assert_eq!(v["detectable"], false);
    assert_eq!(v["failing_component"], serde_json::json!(["0", "2", "3", "5"]));
    assert_eq!(v["diagnosis"]["culprits"], serde_json::json!(["3"]));
}

#[test]
fn enumerate_writes_manifest_and_reuses_cache() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cache = dir.path().join("cache");
    let topo = topology();
    let args = ["--topology", s(&topo), "--out", s(&out), "--cache-dir", s(&cache), "enumerate"];
    assert!(run(&args).status.success());
    let m = read_json(&out.join("manifest.json"));
    assert_eq!(m["results"]["detectable"], 21);
    assert_eq!(m["results"]["undetectable"], 14);
    assert_eq!(m["results"]["cache_hit"], false);
    assert!(m["timings_ms"]["offline"].is_number());
    assert!(run(&args).status.success());
    assert_eq!(read_json(&out.join("manifest.json"))["results"]["cache_hit"], true);
}

#[test]
fn tampered_cache_is_stale() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache");
    let six = data_dir().join("six_zone.json");
    assert!(run(&["--topology", s(&six), "--cache-dir", s(&cache), "enumerate"]).status.success());
    let t6 = Topology::load(&six).unwrap();
    let t4 = Topology::load(topology()).unwrap();
    fs::rename(
        cache_path(&cache, &t6, &Constraints::none()),
        cache_path(&cache, &t4, &Constraints::none()),
    )
    .unwrap();
    let out = run(&["--topology", s(&topology()), "--cache-dir", s(&cache), "enumerate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_line(&out).starts_with("error[stale-cache]:"));
}

#[test]
fn empty_data_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("empty.csv");
    fs::write(&data, "timestamp,sensor_id,measured,predicted,quality\n").unwrap();
    let out = run(&["--topology", s(&topology()), "--out", s(dir.path()), "estimate", "--data", s(&data)]);
    assert_ne!(out.status.code(), Some(0));
    assert!(stderr_line(&out).starts_with("error[empty-window]:"));
}

#[test]
fn malformed_inputs_name_their_location() {
    let dir = tempfile::tempdir().unwrap();
    let topo = dir.path().join("bad.json");
    fs::write(&topo, "{\n  \"reference\": \"0\",\n  \"nodes\": [1]\n}\n").unwrap();
    let out = run(&["--topology", s(&topo), "detect", "--faults", "L1"]);
    assert_eq!(out.status.code(), Some(1));
    let line = stderr_line(&out);
    assert!(line.starts_with("error[parse]:") && line.contains("bad.json:3"), "{line}");

    let data = dir.path().join("bad.csv");
    fs::write(&data, "timestamp,sensor_id,measured,predicted,quality\n2024-01-01T00:00:00,1,abc,1,ok\n").unwrap();
    let out = run(&["--topology", s(&topology()), "--out", s(dir.path()), "estimate", "--data", s(&data)]);
    let line = stderr_line(&out);
    assert!(line.starts_with("error[parse]:") && line.contains(":2"), "{line}");
}

#[test]
fn usage_errors_are_single_line() {
    let out = run(&["detect"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_line(&out).starts_with("error[usage]:"));
    let out = run(&["--topology", s(&topology()), "baseline", "--data", "x.csv", "--lambda", "-1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_line(&out).starts_with("error["));
}

#[test]
fn simulate_then_estimate_recovers_leak() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    let est = dir.path().join("est");
    let scenario = data_dir().join("scenarios/leak_zone3.json");
    assert!(run(&["--out", s(&sim), "--seed", "1", "simulate", "--scenario", s(&scenario)]).status.success());
    assert!(sim.join("ground_truth.json").exists());
    let out = run(&[
        "--topology", s(&topology()), "--out", s(&est), "estimate", "--data", s(&sim.join("samples.csv")), "--window", "daily",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(&est.join("report.json"));
    assert_eq!(report.as_array().unwrap().len(), 3);
    for w in report.as_array().unwrap() {
        assert_eq!(w["envelope"]["L3"]["min"], 2.0);
        assert_eq!(w["envelope"]["L3"]["max"], 2.0);
    }
    let m = read_json(&est.join("manifest.json"));
    assert!(m["timings_ms"]["offline"].as_f64().unwrap() >= 0.0);
    assert!(m["timings_ms"]["online"].as_f64().unwrap() >= 0.0);
    for row in csv_rows(&est.join("plots/zone-3.csv")) {
        assert_eq!(row[1], row[2]);
        assert_eq!(row[5], "false");
    }
}

#[test]
fn missing_sensor_rows_are_propagated() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    let est = dir.path().join("est");
    let scenario = data_dir().join("scenarios/missing_sensor2.json");
    assert!(run(&["--out", s(&sim), "simulate", "--scenario", s(&scenario)]).status.success());
    assert!(run(&["--topology", s(&topology()), "--out", s(&est), "estimate", "--data", s(&sim.join("samples.csv"))])
        .status
        .success());
    let z1 = csv_rows(&est.join("plots/zone-1.csv"));
    let z2 = csv_rows(&est.join("plots/zone-2.csv"));
    // the sensor is missing on the second day only
    assert_eq!(z2[1][5], "true");
    assert_eq!(z2[1][1..3], z1[1][1..3]);
    assert_eq!(z2[1][1], "1.5");
    assert_eq!(z2[0][5], "false");
    assert_eq!(z2[0][1], "0.5");
}

#[test]
fn tie_window_exports_leak_range() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("tie.csv");
    write_residual_csv(&data, &[0.0, 1.0, 1.0, 0.0]);
    let est = dir.path().join("est");
    assert!(run(&["--topology", s(&topology()), "--out", s(&est), "estimate", "--data", s(&data)]).status.success());
    let z3 = csv_rows(&est.join("plots/zone-3.csv"));
    assert_eq!(z3.len(), 1);
    assert_eq!(z3[0][1..5], ["0", "1", "0", "1"]);
    let flat = fs::read_to_string(est.join("estimates.csv")).unwrap();
    assert!(flat.lines().any(|l| l.ends_with(",LF1,1,-1,0,false")), "{flat}");
}

#[test]
fn baseline_writes_estimates() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("leak.csv");
    write_residual_csv(&data, &[2.0, 2.0, 2.0, 0.0]);
    let out = run(&["--topology", s(&topology()), "--out", s(dir.path()), "baseline", "--data", s(&data), "--lambda", "0.05"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let b = read_json(&dir.path().join("baseline.json"));
    let l3 = b[0]["values"]["L3"].as_f64().unwrap();
    assert!((l3 - 2.0).abs() < 0.1, "{l3}");
    assert!(b[0]["kkt_residual"].as_f64().unwrap() <= 1e-6);
}
