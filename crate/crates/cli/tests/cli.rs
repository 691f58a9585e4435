use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn sls(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sls")).args(args).output().expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn stderr_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).expect("stderr is JSON")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn bundled(name: &str) -> Value {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/scenarios").join(format!("{name}.scenario"));
    read_json(&path)
}

fn write_scenario(dir: &TempDir, name: &str, value: &Value) -> String {
    let path = dir.path().join(name);
    fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn regulator_smoke_matches_riccati_cost() {
    let dir = TempDir::new().unwrap();
    let out = sls(&["solve", "--scenario", "regulator_smoke", "--seed", "1", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    // Scalar x' = x + u, unit weights on every step, horizon 5, x0 = 1.
    let mut p = 1.0;
    for _ in 0..5 {
        p = 1.0 + p - p * p / (1.0 + p);
    }
    let report = read_json(&dir.path().join("regulator_smoke/seed-1/report.json"));
    let cost = report["realized_cost"].as_f64().unwrap();
    assert!((cost - p).abs() < 1e-10, "{cost} vs {p}");
    assert_eq!(report["seed"], 1);
    assert_eq!(report["config_hash"].as_str().unwrap().len(), 64);
    for name in ["controller.bin", "maps.bin", "trajectory.csv", "report.json"] {
        assert!(dir.path().join("regulator_smoke/seed-1").join(name).exists(), "{name}");
    }
}

#[test]
fn mug_sugar_solve_is_bit_reproducible() {
    let dir = TempDir::new().unwrap();
    let root = dir.path().to_str().unwrap();
    for label in ["a", "b"] {
        let out = sls(&["solve", "--scenario", "mug_sugar", "--seed", "42", "--out", root, "--label", label]);
        assert_eq!(out.status.code(), Some(0));
    }
    let base = dir.path().join("mug_sugar");
    let a = fs::read(base.join("a/trajectory.csv")).unwrap();
    assert_eq!(a, fs::read(base.join("b/trajectory.csv")).unwrap());
    assert_eq!(fs::read(base.join("a/controller.bin")).unwrap(), fs::read(base.join("b/controller.bin")).unwrap());
    let report = read_json(&base.join("a/report.json"));
    assert!(report["correlation_residuals"][0]["residual"].as_f64().unwrap() <= 1e-3);
}

#[test]
fn rollout_of_saved_controller_reproduces_solve() {
    let dir = TempDir::new().unwrap();
    let root = dir.path().to_str().unwrap();
    assert_eq!(sls(&["solve", "--scenario", "adapt_reach", "--seed", "5", "--out", root]).status.code(), Some(0));
    let ctrl = dir.path().join("adapt_reach/seed-5/controller.bin");
    let out = sls(&["rollout", "--scenario", "adapt_reach", "--seed", "5", "--out", root, "--controller", ctrl.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(
        fs::read(dir.path().join("adapt_reach/seed-5/trajectory.csv")).unwrap(),
        fs::read(dir.path().join("adapt_reach/rollout-seed-5/trajectory.csv")).unwrap()
    );
}

#[test]
fn adapt_rewrites_feedforward_only() {
    let dir = TempDir::new().unwrap();
    let root = dir.path().to_str().unwrap();
    assert_eq!(sls(&["solve", "--scenario", "adapt_reach", "--out", root]).status.code(), Some(0));
    let run = dir.path().join("adapt_reach/seed-0");
    let ctrl = run.join("controller.bin");
    let maps = run.join("maps.bin");
    let args = |edit: &'static str, label: &'static str| {
        vec![
            "adapt".to_string(),
            "--scenario".into(),
            "adapt_reach".into(),
            "--out".into(),
            root.into(),
            "--label".into(),
            label.into(),
            "--controller".into(),
            ctrl.to_str().unwrap().into(),
            "--maps".into(),
            maps.to_str().unwrap().into(),
            "--edit".into(),
            edit.into(),
        ]
    };
    let run_adapt = |edit, label| {
        let a = args(edit, label);
        sls(&a.iter().map(String::as_str).collect::<Vec<_>>())
    };

    let out = run_adapt(r#"{"apply_at":0,"t":60,"delta":[0,0,0,0]}"#, "noop");
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(fs::read(dir.path().join("adapt_reach/noop/controller.bin")).unwrap(), fs::read(&ctrl).unwrap());
    assert_eq!(stdout_json(&out)["feedforward_change"], 0.0);

    let out = run_adapt(r#"{"apply_at":0,"t":60,"delta":[0.05,0,0,0]}"#, "shift");
    assert_eq!(out.status.code(), Some(0));
    let report = stdout_json(&out);
    assert!(report["feedforward_change"].as_f64().unwrap() > 0.0);
    assert_eq!(report["flagged"], true);

    let out = run_adapt(r#"{"apply_at":0,"t":61,"delta":[0,0,0,0]}"#, "bad");
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["field"], "edit.t");
}

#[test]
fn out_of_range_viapoint_is_a_validation_error() {
    let dir = TempDir::new().unwrap();
    let mut sc = bundled("mug_sugar");
    sc["cost"]["viapoints"][0]["t"] = 200.into();
    let path = write_scenario(&dir, "bad.scenario", &sc);
    let out = sls(&["solve", "--scenario", &path, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_json(&out);
    assert_eq!(err["kind"], "validation");
    assert_eq!(err["field"], "cost.viapoints[0].t");
    assert!(!dir.path().join("mug_sugar").exists());
}

#[test]
fn unknown_keys_and_solvers_are_rejected() {
    let dir = TempDir::new().unwrap();
    let mut sc = bundled("regulator_smoke");
    sc["solver"]["kind"] = "lqg".into();
    let path = write_scenario(&dir, "kind.scenario", &sc);
    let out = sls(&["solve", "--scenario", &path, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["kind"], "json");

    let mut sc = bundled("regulator_smoke");
    sc["horizon_typo"] = 5.into();
    let path = write_scenario(&dir, "typo.scenario", &sc);
    let out = sls(&["solve", "--scenario", &path, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_json(&out)["message"].as_str().unwrap().contains("horizon_typo"));

    let out = sls(&["solve", "--scenario", "no_such_scenario"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unconverged_isls_exits_with_code_3() {
    let dir = TempDir::new().unwrap();
    let mut sc = bundled("pickplace");
    sc["solver"]["max_iter"] = 1.into();
    let path = write_scenario(&dir, "short.scenario", &sc);
    let out = sls(&["solve", "--scenario", &path, "--out", dir.path().to_str().unwrap(), "--trace"]);
    assert_eq!(out.status.code(), Some(3));
    let report = stdout_json(&out);
    assert_eq!(report["converged"], false);
    let trace = fs::read_to_string(dir.path().join("pickplace/seed-0/trace.csv")).unwrap();
    assert!(trace.starts_with("iteration,cost,alpha,k_inf\n"));
    assert_eq!(trace.lines().count(), 3);
}

#[test]
fn bench_mug_sugar_report_is_consistent() {
    let dir = TempDir::new().unwrap();
    let out = sls(&["bench", "mug-sugar", "--scenario", "mug_sugar", "--trials", "2", "--seed", "3", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let report = read_json(&dir.path().join("mug_sugar/bench-mug-sugar-seed-3/report.json"));
    assert_eq!(report["seeds"], serde_json::json!([3, 4]));
    for s in report["solvers"].as_array().unwrap() {
        let costs: Vec<f64> = s["costs"].as_array().unwrap().iter().map(|c| c.as_f64().unwrap()).collect();
        let mean = costs.iter().sum::<f64>() / 2.0;
        let std = ((costs[0] - mean).powi(2) + (costs[1] - mean).powi(2)).sqrt();
        assert!((s["mean"].as_f64().unwrap() - mean).abs() <= 1e-12 * mean.abs());
        assert!((s["std"].as_f64().unwrap() - std).abs() <= 1e-9 * std.max(1.0));
    }

    let out = sls(&["bench", "mug-sugar", "--scenario", "mug_sugar", "--trials", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["field"], "trials");
}

#[test]
fn bench_pickplace_writes_traces() {
    let dir = TempDir::new().unwrap();
    let out = sls(&["bench", "pickplace", "--scenario", "pickplace", "--trials", "1", "--out", dir.path().to_str().unwrap(), "--trace"]);
    assert_eq!(out.status.code(), Some(0));
    let summary = stdout_json(&out);
    let trial = &summary["trials"][0];
    assert_eq!(trial["converged"], true);
    assert!(trial["place_residual"].as_f64().unwrap() <= 5e-3);
    assert!(trial.get("trace").is_none());
    let trace = fs::read_to_string(dir.path().join("pickplace/bench-pickplace-seed-0/trace-0.csv")).unwrap();
    assert_eq!(trace.lines().count() as u64, trial["iterations"].as_u64().unwrap() + 2);
}

#[test]
fn bench_adapt_accepts_edit_files() {
    let dir = TempDir::new().unwrap();
    let edits = dir.path().join("edits.json");
    fs::write(&edits, r#"[{"apply_at":30,"t":60,"delta":[0.02,0.01,0,0]}]"#).unwrap();
    let out = sls(&["bench", "adapt", "--scenario", "adapt_reach", "--edits", edits.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let details = &stdout_json(&out)["details"];
    let edit = &details["edits"][0];
    assert!(edit["feedforward_gap"].as_f64().unwrap() <= 1e-9);
    assert!(edit["trajectory_gap"].as_f64().unwrap() <= 1e-6);
    assert_eq!(edit["flagged"], true);
}
