use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn capgame(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_capgame"))
        .args(args)
        .env_remove("CAPGAME_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn run_ok(args: &[&str]) {
    let out = capgame(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn config_with(base: &str, edit: impl FnOnce(&mut Value), dir: &Path) -> PathBuf {
    let mut v = json(&configs().join(base));
    edit(&mut v);
    let path = dir.join(base);
    fs::write(&path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    path
}

fn str_path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn capacities(report: &Value) -> Vec<f64> {
    report["equilibrium"]["capacities"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_f64().unwrap())
        .collect()
}

#[test]
fn solve_two_and_one_player() {
    let dir = tempfile::tempdir().unwrap();
    for (name, expect) in [("two_player.json", 0.8535), ("one_player.json", 2f64.sqrt())] {
        let out = dir.path().join(name);
        run_ok(&[
            "solve",
            "--config",
            str_path(&configs().join(name)),
            "--out",
            str_path(&out),
        ]);
        for c in capacities(&json(&out.join("report.json"))) {
            assert!((c - expect).abs() < 0.01, "{name}: {c} vs {expect}");
        }
        assert!(out.join("summary.txt").exists());
        assert!(out.join("manifest.json").exists());
    }
}

#[test]
fn expensive_capacity_means_no_entry() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_with(
        "two_player.json",
        |v| v["instance"]["gamma"] = 0.6.into(),
        dir.path(),
    );
    let out = dir.path().join("out");
    run_ok(&["solve", "--config", str_path(&cfg), "--out", str_path(&out)]);
    let report = json(&out.join("report.json"));
    assert_eq!(capacities(&report), vec![0.0, 0.0]);
    assert!(report["equilibrium"]["diagnostics"]["note"].is_string());
}

#[test]
fn missing_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = capgame(&[
        "solve",
        "--config",
        str_path(&dir.path().join("absent.json")),
        "--out",
        str_path(&dir.path().join("out")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "config-error");
    assert!(err["message"].as_str().unwrap().contains("absent.json"));
}

#[test]
fn non_converging_dynamics_is_a_solver_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_with(
        "asymmetric.json",
        |v| v["settings"]["max-coordinate-sweeps"] = 1.into(),
        dir.path(),
    );
    let out = capgame(&[
        "solve",
        "--config",
        str_path(&cfg),
        "--out",
        str_path(&dir.path().join("out")),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "solver-error");
}

#[test]
fn manifest_reproduces_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    let second = dir.path().join("second");
    run_ok(&[
        "sweep",
        "--config",
        str_path(&configs().join("sweep.json")),
        "--replicates",
        "20000",
        "--seed",
        "5",
        "--out",
        str_path(&first),
    ]);
    run_ok(&[
        "sweep",
        "--config",
        str_path(&first.join("manifest.json")),
        "--out",
        str_path(&second),
    ]);
    for f in ["sweep.csv", "report.json", "summary.txt"] {
        assert_eq!(
            fs::read(first.join(f)).unwrap(),
            fs::read(second.join(f)).unwrap(),
            "{f} differs"
        );
    }
    let manifest = json(&first.join("manifest.json"));
    assert_eq!(manifest["settings"]["seed"], 5);
    assert_eq!(manifest["settings"]["replicates"], 20000);
    assert_eq!(manifest["command"], "sweep");
}

#[test]
fn single_point_sweep_has_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_with(
        "sweep.json",
        |v| v["sweep"]["points"] = serde_json::json!([0.86]),
        dir.path(),
    );
    let out = dir.path().join("out");
    run_ok(&["sweep", "--config", str_path(&cfg), "--replicates", "10000", "--out", str_path(&out)]);
    let text = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("0.86,"));
}

/// With output fixed at z, supply z * C matches demand exactly and every unit
/// is paid the backstop price, so C / E[D] = 1 / z and xi = gamma / z.
#[test]
fn deterministic_output_curve_matches_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_with(
        "efficiency_curve.json",
        |v| {
            v["curve"]["ns"] = serde_json::json!([2, 5, 10]);
            v["curve"]["generation"] = serde_json::json!({
                "kind": "iid", "distribution": {"kind": "point-mass", "value": 0.5}
            });
            v["curve"]["demand"] = serde_json::json!({"kind": "point-mass", "value": 1});
        },
        dir.path(),
    );
    let out = dir.path().join("out");
    run_ok(&[
        "efficiency-curve",
        "--config",
        str_path(&cfg),
        "--replicates",
        "2000",
        "--out",
        str_path(&out),
    ]);
    let mut rdr = csv::Reader::from_path(out.join("efficiency_curve.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let (xi_col, ratio_col) = (col("efficiency"), col("capacity_ratio"));
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec.unwrap();
        let xi: f64 = rec[xi_col].parse().unwrap();
        let ratio: f64 = rec[ratio_col].parse().unwrap();
        assert!((xi - 0.25 / 0.5).abs() < 1e-3, "xi = {xi}");
        assert!((ratio - 1.0 / 0.5).abs() < 1e-3, "ratio = {ratio}");
        rows += 1;
    }
    assert_eq!(rows, 3);
}

#[test]
fn casestudy_on_bundled_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    run_ok(&[
        "casestudy",
        "--config",
        str_path(&configs().join("casestudy.json")),
        "--replicates",
        "20000",
        "--out",
        str_path(&out),
    ]);
    for f in ["normalized.csv", "correlation.csv", "model.json", "efficiency_curve.csv"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let report = json(&out.join("report.json"));
    let xi: Vec<f64> = report["curve"]["rows"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["efficiency"].as_f64().unwrap())
        .collect();
    assert!(xi.windows(2).all(|w| w[1] > w[0]), "{xi:?}");
    assert_eq!(report["daytime_rows"], 2400);
}

#[test]
fn oracle_check_agrees() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    run_ok(&[
        "oracle-check",
        "--config",
        str_path(&configs().join("oracle.json")),
        "--out",
        str_path(&out),
    ]);
    let rows = json(&out.join("report.json"));
    for r in rows.as_array().unwrap() {
        assert_eq!(r["within_3se"], true, "{r}");
    }
}

#[test]
fn planner_tabulates_social_cost() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    run_ok(&[
        "planner",
        "--config",
        str_path(&configs().join("planner.json")),
        "--replicates",
        "50000",
        "--out",
        str_path(&out),
    ]);
    let report = json(&out.join("report.json"));
    let total = report["total_capacity"].as_f64().unwrap();
    assert!((total - 1.707).abs() < 0.02, "{total}");
    let text = fs::read_to_string(out.join("social_cost.csv")).unwrap();
    assert_eq!(text.lines().count(), 7);
}

#[test]
fn out_dir_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("from-env");
    let status = Command::new(env!("CARGO_BIN_EXE_capgame"))
        .args(["solve", "--config", str_path(&configs().join("one_player.json")), "--replicates", "1000"])
        .env("CAPGAME_OUT_DIR", &out)
        .output()
        .unwrap();
    assert!(status.status.success());
    assert!(out.join("report.json").exists());
}
