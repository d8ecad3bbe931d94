use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use feasible_region::observer::StepRecord;
use feasible_region::polytope;

fn feasreg(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_feasreg"))
        .arg("--out-dir")
        .arg(out)
        .args(args)
        .env_remove("FEASREG_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn last_record(path: &Path) -> StepRecord {
    let text = fs::read_to_string(path).unwrap();
    serde_json::from_str(text.lines().last().unwrap()).unwrap()
}

#[test]
fn compare_writes_monotone_area_column() {
    let dir = tempfile::tempdir().unwrap();
    let out = feasreg(dir.path(), &["compare", "--scenario", "staggered.json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut rdr = csv::Reader::from_path(dir.path().join("compare_r0.csv")).unwrap();
    assert_eq!(rdr.headers().unwrap(), vec!["t", "area", "ukf_error"]);
    let rows: Vec<(f64, f64, f64)> = rdr.deserialize().map(|r| r.unwrap()).collect();
    assert!(!rows.is_empty());
    assert!(rows.windows(2).all(|w| w[1].1 <= w[0].1 + 1e-12));
    let mut summary = csv::Reader::from_path(dir.path().join("summary_r0.csv")).unwrap();
    assert_eq!(summary.headers().unwrap(), vec!["t", "area", "contains_true_theta"]);
    let ukf = csv::Reader::from_path(dir.path().join("ukf_r0.csv")).unwrap().headers().unwrap().clone();
    assert_eq!(ukf, vec!["t", "mean_x", "mean_y", "cov_trace", "error_norm"]);
}

#[test]
fn render_without_data_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = feasreg(dir.path(), &["render"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no data"));
}

#[test]
fn render_draws_snapshots_and_curves() {
    let dir = tempfile::tempdir().unwrap();
    assert!(feasreg(dir.path(), &["compare", "--scenario", "corridor"]).status.success());
    let out = feasreg(dir.path(), &["render", "--snapshots", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["region_r0_00.svg", "region_r0_02.svg", "curves_r0.svg"] {
        let body = fs::read_to_string(dir.path().join(f)).unwrap();
        assert!(body.starts_with("<svg"), "{f}");
    }
    let curves = fs::read_to_string(dir.path().join("curves_r0.svg")).unwrap();
    assert_eq!(curves.matches("<polyline").count(), 2);
}

#[test]
fn coarse_cadence_region_contains_fine_region() {
    let fine = tempfile::tempdir().unwrap();
    let coarse = tempfile::tempdir().unwrap();
    assert!(feasreg(fine.path(), &["identify", "--scenario", "four_robot_exchange"]).status.success());
    assert!(feasreg(coarse.path(), &["identify", "--scenario", "four_robot_exchange", "--cadence", "5"]).status.success());
    for i in 0..4 {
        let name = format!("observer_r{i}.jsonl");
        let f = last_record(&fine.path().join(&name));
        let c = last_record(&coarse.path().join(&name));
        for v in f.polygon.vertices() {
            assert!(polytope::contains(&c.polygon, v, 1e-9));
        }
    }
}

#[test]
fn runs_are_byte_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        assert!(feasreg(d.path(), &["compare", "--scenario", "random", "--seed", "11"]).status.success());
    }
    for f in ["observer_r0.jsonl", "compare_r1.csv", "ukf_r2.csv", "scenario.json"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn identify_consumes_simulate_log() {
    let dir = tempfile::tempdir().unwrap();
    let direct = tempfile::tempdir().unwrap();
    assert!(feasreg(dir.path(), &["simulate", "--scenario", "staggered"]).status.success());
    let trace = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert!(trace.starts_with("t,robot,x,y,ux,uy"));
    let log = dir.path().join("measurements.jsonl");
    let out = feasreg(dir.path(), &["identify", "--scenario", "staggered", "--measurements", log.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(feasreg(direct.path(), &["identify", "--scenario", "staggered"]).status.success());
    assert_eq!(
        fs::read(dir.path().join("observer_r0.jsonl")).unwrap(),
        fs::read(direct.path().join("observer_r0.jsonl")).unwrap()
    );
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(feasreg(dir.path(), &["identify", "--scenario", "no-such-scenario"]).status.code(), Some(2));
    assert_eq!(feasreg(dir.path(), &["simulate", "--scenario", "corridor", "--dt", "-1"]).status.code(), Some(2));
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{ \"name\": 3 }").unwrap();
    assert_eq!(feasreg(dir.path(), &["simulate", "--scenario", bad.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn wrong_hypothesis_exits_with_contradiction() {
    let dir = tempfile::tempdir().unwrap();
    assert!(feasreg(dir.path(), &["simulate", "--scenario", "corridor"]).status.success());
    // Same robot and obstacles, but a prior box that excludes the true goal.
    let mut cfg: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("scenario.json")).unwrap()).unwrap();
    cfg["robots"][0]["goal"] = serde_json::json!([1.0, 5.0]);
    cfg["theta0_box"] = serde_json::json!({ "min": [0.0, 4.0], "max": [2.0, 6.0] });
    let wrong = dir.path().join("wrong.json");
    fs::write(&wrong, serde_json::to_string(&cfg).unwrap()).unwrap();
    let log = dir.path().join("measurements.jsonl");
    let out = feasreg(
        dir.path(),
        &["identify", "--scenario", wrong.to_str().unwrap(), "--measurements", log.to_str().unwrap()],
    );
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}
