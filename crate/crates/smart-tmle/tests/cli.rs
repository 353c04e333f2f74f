use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_smart-tmle")).args(args).output().expect("binary runs")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn generate(dir: &Path, scenario: &str, n: usize) -> (String, String) {
    let csv = dir.join(format!("{scenario}.csv"));
    let out = run(&["generate", "--scenario", scenario, "--n", &n.to_string(), "--seed", "11", "--out", csv.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    (csv.to_str().unwrap().into(), csv.with_extension("toml").to_str().unwrap().into())
}

#[test]
fn analyze_writes_complete_report() {
    let dir = tempfile::tempdir().unwrap();
    let (csv, toml) = generate(dir.path(), "sim2", 1815);
    let out = dir.path().join("fit");
    let o = out.to_str().unwrap();
    let res = run(&["analyze", "--data", &csv, "--config", &toml, "--out", o, "--effects", "--seed", "3"]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));

    let report = json(&out.join("report.json"));
    let b3 = &report["coefficients"][3];
    assert_eq!(b3["name"], "a:blip");
    for key in ["estimate", "se", "ci_lower", "ci_upper", "p_value"] {
        assert!(b3[key].is_f64(), "{key}");
        assert!(report["interaction"][key].is_f64(), "{key}");
    }
    assert!(b3["ci_lower"].as_f64() < b3["ci_upper"].as_f64());
    assert_eq!(report["population"], "initiators");
    assert_eq!(report["h_weight_mode"], "unit");
    assert_eq!(report["covariance"].as_array().unwrap().len(), 4);
    assert_eq!(report["effects"].as_array().unwrap().len(), 3);
    assert!(report["diagnostics"]["max_abs_mean_ic"].as_f64().unwrap() < 1e-6);

    let hist = std::fs::read_to_string(out.join("blip_histogram.csv")).unwrap();
    assert_eq!(hist.lines().next(), Some("bin_lower,bin_upper,count"));
    let counted: usize = hist.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap()).sum();
    assert_eq!(counted, 1815);
    let curve = std::fs::read_to_string(out.join("msm_curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 102);
    assert_eq!(std::fs::read_to_string(out.join("blip.csv")).unwrap().lines().count(), 1816);

    let manifest = json(&out.join("manifest.json"));
    assert_eq!(manifest["status"], "succeeded");
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 4);

    // Identical inputs reproduce identical numbers.
    let again = dir.path().join("fit2");
    let res = run(&["analyze", "--data", &csv, "--config", &toml, "--out", again.to_str().unwrap(), "--effects", "--seed", "3"]);
    assert!(res.status.success());
    assert_eq!(json(&again.join("report.json")), report);
    for f in ["blip.csv", "msm_curve.csv", "blip_histogram.csv"] {
        assert_eq!(std::fs::read(out.join(f)).unwrap(), std::fs::read(again.join(f)).unwrap());
    }
}

#[test]
fn weight_mode_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let (csv, toml) = generate(dir.path(), "sim1_dgp1", 800);
    let cfg = std::fs::read_to_string(&toml).unwrap().replace("h_weight_mode = \"unit\"", "h_weight_mode = \"treatment_prevalence\"");
    std::fs::write(&toml, cfg).unwrap();
    let out = dir.path().join("fit");
    let res = run(&["analyze", "--data", &csv, "--config", &toml, "--out", out.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    assert_eq!(json(&out.join("report.json"))["h_weight_mode"], "treatment_prevalence");
}

#[test]
fn constant_blip_exits_with_estimation_failure() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("flat.csv");
    let mut text = String::from("l1,a1,y1,a2,y2\n");
    for i in 0..60 {
        text.push_str(&format!("1,{},{},{},{}\n", i % 2, (i / 3) % 2, (i / 2) % 2, (i / 5) % 2));
    }
    std::fs::write(&csv, text).unwrap();
    let out = dir.path().join("fit");
    let res = run(&["analyze", "--data", csv.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&res.stderr).contains("DegenerateBlip"));
    let manifest = json(&out.join("manifest.json"));
    assert_eq!(manifest["status"], "failed");
    assert_eq!(manifest["error"]["stage"], "blip");
    assert_eq!(manifest["error"]["kind"], "DegenerateBlip");
}

#[test]
fn input_problems_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fit");
    let o = out.to_str().unwrap();
    let res = run(&["analyze", "--data", dir.path().join("absent.csv").to_str().unwrap(), "--out", o]);
    assert_eq!(res.status.code(), Some(4));

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "l1,a1,y1,a2,y2\n0,1,yes,1,0\n").unwrap();
    let res = run(&["analyze", "--data", bad.to_str().unwrap(), "--out", o]);
    assert_eq!(res.status.code(), Some(2));
    assert_eq!(json(&out.join("manifest.json"))["error"]["stage"], "input");

    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "q_bound = 2.0\n").unwrap();
    let res = run(&["analyze", "--data", bad.to_str().unwrap(), "--config", cfg.to_str().unwrap(), "--out", o]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn simulate_writes_summary_and_replicates() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("mc");
    let res = run(&["simulate", "--scenario", "sim1_dgp1", "--reps", "10", "--n", "500", "--seed", "5", "--jobs", "2", "--out", out.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));

    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    let mut lines = summary.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header.len(), row.len());
    assert!(lines.next().is_none());
    let field = |name: &str| row[header.iter().position(|h| *h == name).unwrap()];
    assert_eq!(field("scenario"), "sim1_dgp1");
    assert_eq!(field("reps"), "10");
    for name in ["bias", "variance", "mse", "coverage", "power"] {
        assert!(field(name).parse::<f64>().unwrap().is_finite(), "{name}");
    }
    let replicates = std::fs::read_to_string(out.join("sim1_dgp1_replicates.csv")).unwrap();
    assert_eq!(replicates.lines().count(), 11);
    let report = json(&out.join("sim1_dgp1_report.json"));
    assert_eq!(report["replicates"].as_array().unwrap().len(), 10);
    assert_eq!(json(&out.join("manifest.json"))["outputs"].as_array().unwrap().len(), 3);
}

#[test]
fn unknown_scenario_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("mc");
    let res = run(&["simulate", "--scenario", "sim9", "--reps", "10", "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    assert_eq!(json(&out.join("manifest.json"))["status"], "failed");
}

#[test]
fn oracle_prints_design_constants() {
    let res = run(&["oracle", "--scenario", "sim1_v1"]);
    assert!(res.status.success());
    let v: Value = serde_json::from_slice(&res.stdout).unwrap();
    assert!((v["true_beta3"].as_f64().unwrap() + 1.92).abs() < 0.05);
    let cells: Vec<f64> = v["blip_cells"].as_array().unwrap().iter().map(|c| c["blip"].as_f64().unwrap()).collect();
    for (c, want) in cells.iter().zip([0.2311, 0.2215, 0.2509, -0.1497]) {
        assert!((c - want).abs() < 1e-4, "{c}");
    }

    let res = run(&["oracle", "--scenario", "sim2", "--n-oracle", "200000"]);
    assert!(res.status.success());
    let v: Value = serde_json::from_slice(&res.stdout).unwrap();
    assert!((v["marginal"]["first_stage_rd"].as_f64().unwrap() - 0.0554).abs() < 0.005);
    assert!(v["blip_cells"].is_null());
}
