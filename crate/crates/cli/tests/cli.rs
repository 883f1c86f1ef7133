use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn pinning(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pinning"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn stderr_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("error report on stderr");
    serde_json::from_str(line).unwrap()
}

#[test]
fn dual_writes_fields_and_regions() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let run = pinning(&["dual", "--domain", "disk", "--n", "33", "--lambda", "4", "--out", out]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    for file in ["config.json", "f.csv", "f.ppm", "D.csv", "D.ppm", "regions.ppm", "solution.json"] {
        assert!(dir.path().join(file).exists(), "missing {file}");
    }
    let regions = read_json(&dir.path().join("regions.json"));
    assert_eq!(regions["regions"]["levels"], 1);
    assert_eq!(regions["duality"]["passed"], true);
    let header = std::fs::read_to_string(dir.path().join("f.csv")).unwrap();
    assert!(header.starts_with("ix,iy,x,y,value\n"));
}

#[test]
fn negative_gamma_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let run = pinning(&["dual", "--n", "17", "--gamma", "-1", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(2));
    let report = stderr_json(&run);
    assert_eq!(report["exit_code"], 2);
    assert!(report["message"].as_str().unwrap().contains("gamma"));
}

#[test]
fn sweep_cap_is_a_convergence_failure() {
    let dir = tempfile::tempdir().unwrap();
    let run = pinning(&[
        "dual", "--n", "65", "--lambda", "9", "--max-sweeps", "3", "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(run.status.code(), Some(3));
    let sidecar = read_json(&dir.path().join("solution.json"));
    assert_eq!(sidecar["converged"], false);
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, r#"{"domain": "square", "n": 17, "lambda": 2.0, "gamma": 1.0}"#).unwrap();
    let out = dir.path().join("out");
    let run = pinning(&[
        "dual", "--config", cfg.to_str().unwrap(), "--lambda", "3", "--out", out.to_str().unwrap(),
    ]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let saved = read_json(&out.join("config.json"));
    assert_eq!(saved["domain"], "square");
    assert_eq!(saved["lambda"], 3.0);

    std::fs::write(&cfg, r#"{"lambada": 2.0}"#).unwrap();
    let run = pinning(&["dual", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(2));
}

#[test]
fn critical_writes_ladder_and_phase_table() {
    let dir = tempfile::tempdir().unwrap();
    let run = pinning(&[
        "critical", "--n", "33", "--levels", "2", "--lambda-steps", "6", "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let ladder = read_json(&dir.path().join("ladder.json"));
    let lambdas = ladder["lambdas"].as_array().unwrap();
    assert_eq!(lambdas.len(), 2);
    assert!(lambdas[0].as_f64().unwrap() < lambdas[1].as_f64().unwrap());
    let phase = std::fs::read_to_string(dir.path().join("phase.csv")).unwrap();
    assert!(phase.starts_with("lambda,J,scenario"));
    assert_eq!(phase.lines().count(), 7);
}

#[test]
fn micro_exact_matches_descent_and_recovery_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("min");
    let run = pinning(&[
        "micro", "--domain", "square", "--n", "41", "--epsilon", "0.2", "--lambda", "12", "--exact",
        "--out", out.to_str().unwrap(),
    ]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let summary = read_json(&out.join("micro.json"));
    assert_eq!(summary["holes"], 9);
    assert_eq!(summary["descent_matches_exact"], true);
    assert!(out.join("degrees.csv").exists());

    // recovery from a dual vorticity written by the dual command
    let dual_out = dir.path().join("dual");
    let run = pinning(&[
        "dual", "--domain", "disk", "--n", "65", "--lambda", "4", "--out", dual_out.to_str().unwrap(),
    ]);
    assert!(run.status.success());
    let rec_out = dir.path().join("rec");
    let run = pinning(&[
        "micro", "--domain", "disk", "--n", "65", "--epsilon", "0.125", "--lambda", "4", "--M", "1",
        "--recover", dual_out.join("D.csv").to_str().unwrap(), "--out", rec_out.to_str().unwrap(),
    ]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let rec = read_json(&rec_out.join("recovery.json"));
    assert_eq!(rec["M"], 1);
    assert!(rec_out.join("D_eps.csv").exists());
}

#[test]
fn gamma_check_rejects_increasing_epsilons() {
    let dir = tempfile::tempdir().unwrap();
    let run = pinning(&[
        "gamma-check", "--domain", "square", "--n", "33", "--epsilons", "0.125,0.25", "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(run.status.code(), Some(2));
    assert!(stderr_json(&run)["message"].as_str().unwrap().contains("decreasing"));
}

#[test]
fn oracle_check_passes() {
    let dir = tempfile::tempdir().unwrap();
    let run = pinning(&["oracle-check", "--samples", "200", "--seed", "7", "--out", dir.path().to_str().unwrap()]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let report = read_json(&dir.path().join("oracle.json"));
    assert!(report.is_object());
}
