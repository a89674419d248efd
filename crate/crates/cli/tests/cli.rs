use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn repo(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn derisk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_derisk")).args(args).output().expect("binary runs")
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn solve(instance: &Path, config: &Path, out: &Path) -> Output {
    derisk(&["solve", "--instance", arg(instance), "--config", arg(config), "--out", arg(out)])
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn write_json(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn queueing_solve_exits_zero_as_derisked() {
    let dir = TempDir::new().unwrap();
    let o = solve(&repo("instances/queueing.json"), &repo("configs/queueing.json"), dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = read_json(&dir.path().join("outcome.json"));
    assert_eq!(out["outcome"]["kind"], "DeRisked");
    assert_eq!(out["family"], "queueing");
    assert!(dir.path().join("monitors.json").exists());
    let csv = fs::read_to_string(dir.path().join("iterations.csv")).unwrap();
    assert!(csv.starts_with("t,cost,phiL,phiMax,exactPhi,cutsAdded,wallMillis\n"));
    assert_eq!(csv.lines().count() - 1, out["iterations"].as_u64().unwrap() as usize);
    assert!(!dir.path().join("outcome.tmp").exists());
}

#[test]
fn interdiction_solve_exits_zero_with_a_certificate() {
    let dir = TempDir::new().unwrap();
    let o = solve(&repo("instances/interdiction.json"), &repo("configs/interdiction.json"), dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = read_json(&dir.path().join("outcome.json"));
    assert_eq!(out["outcome"]["kind"], "Certificate");
    assert_eq!(out["finalPhi"], 35.0);
    assert_eq!(out["finalCost"], 570.0);
}

#[test]
fn zero_iteration_cap_exits_two() {
    let dir = TempDir::new().unwrap();
    let mut cfg = read_json(&repo("configs/queueing.json"));
    cfg["tMax"] = json!(0);
    let cfg = write_json(dir.path(), "cfg.json", &cfg);
    let o = solve(&repo("instances/queueing.json"), &cfg, &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let out = read_json(&dir.path().join("out/outcome.json"));
    assert_eq!(out["outcome"]["kind"], "IterationLimit");
    assert_eq!(out["reason"], "iterationCap");
}

#[test]
fn bad_schema_exits_one_with_a_pointer() {
    let dir = TempDir::new().unwrap();
    let mut cfg = read_json(&repo("configs/queueing.json"));
    cfg["bigDelta"] = json!("small");
    let bad = write_json(dir.path(), "cfg.json", &cfg);
    let o = solve(&repo("instances/queueing.json"), &bad, &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("/bigDelta"), "{}", stderr(&o));

    let mut cfg = read_json(&repo("configs/queueing.json"));
    cfg["schemaVersion"] = json!(99);
    let bad = write_json(dir.path(), "cfg2.json", &cfg);
    let o = solve(&repo("instances/queueing.json"), &bad, &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("/schemaVersion"), "{}", stderr(&o));
}

fn frontier(instance: &Path, config: &Path, out: &Path, grid: &str) -> Output {
    derisk(&["frontier", "--instance", arg(instance), "--config", arg(config), "--out", arg(out), "--theta-grid", grid])
}

fn frontier_rows(out: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(out.join("frontier.csv")).unwrap();
    assert_eq!(r.headers().unwrap(), vec!["theta", "finalCost", "finalPhi", "outcomeKind"]);
    r.records().map(|rec| rec.unwrap().iter().map(str::to_string).collect()).collect()
}

#[test]
fn single_point_frontier_matches_solve() {
    let dir = TempDir::new().unwrap();
    let mut cfg = read_json(&repo("configs/queueing.json"));
    cfg["thetaPolicy"] = json!({"kind": "explicit", "theta": 0.3, "lambdaLo": 0.5, "lambdaHi": 0.6});
    let cfg = write_json(dir.path(), "cfg.json", &cfg);
    let inst = repo("instances/queueing.json");
    assert_eq!(solve(&inst, &cfg, &dir.path().join("s")).status.code(), Some(0));
    let o = frontier(&inst, &cfg, &dir.path().join("f"), "0.3");
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let s = read_json(&dir.path().join("s/outcome.json"));
    let rows = frontier_rows(&dir.path().join("f"));
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][1].parse::<f64>().unwrap(), s["finalCost"].as_f64().unwrap());
    assert_eq!(rows[0][2].parse::<f64>().unwrap(), s["finalPhi"].as_f64().unwrap());
    assert_eq!(rows[0][3], s["outcome"]["kind"].as_str().unwrap());
}

#[test]
fn frontier_risk_falls_as_theta_grows() {
    let dir = TempDir::new().unwrap();
    let o = frontier(
        &repo("instances/queueing.json"),
        &repo("configs/queueing.json"),
        dir.path(),
        "1e-9,0.05,0.1,0.22,0.5",
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows = frontier_rows(dir.path());
    assert_eq!(rows.len(), 5);
    let cost: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    let phi: Vec<f64> = rows.iter().map(|r| r[2].parse().unwrap()).collect();
    // A vanishing weight leaves the nominal optimum in place.
    assert!((cost[0] - 220.0).abs() <= 1e-6, "{}", cost[0]);
    assert!(phi.windows(2).all(|w| w[1] <= w[0] + 1e-6), "{phi:?}");
    assert!(cost.windows(2).all(|w| w[1] >= w[0] - 1e-6), "{cost:?}");
}

#[test]
fn frontier_rejects_a_descending_grid() {
    let dir = TempDir::new().unwrap();
    let o = frontier(&repo("instances/queueing.json"), &repo("configs/queueing.json"), dir.path(), "0.5,0.1");
    assert_eq!(o.status.code(), Some(1));
}

fn oracle(instance: &Path, solution: &Path) -> Output {
    derisk(&["phi-oracle", "--instance", arg(instance), "--solution", arg(solution)])
}

#[test]
fn phi_oracle_reports_nominal_queueing_risk() {
    let dir = TempDir::new().unwrap();
    let sol = write_json(dir.path(), "x.json", &json!({"x": [70.0, 30.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]}));
    let o = oracle(&repo("instances/queueing.json"), &sol);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let w: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((w["value"].as_f64().unwrap() - 100.0).abs() < 1e-6, "{w}");
}

#[test]
fn phi_oracle_on_a_zero_demand_grid_is_zero() {
    let dir = TempDir::new().unwrap();
    let mut inst = read_json(&repo("instances/grid3.json"));
    inst["problem"]["grid"]["buses"][2]["demand"] = json!(0.0);
    let inst = write_json(dir.path(), "grid.json", &inst);
    let v = derisk(&["validate", "--instance", arg(&inst)]);
    assert_eq!(v.status.code(), Some(0), "{}", stderr(&v));
    let summary: Value = serde_json::from_slice(&v.stdout).unwrap();
    let n = summary["variables"].as_u64().unwrap() as usize;
    let sol = write_json(dir.path(), "x.json", &json!({ "x": vec![0.0; n] }));
    let o = oracle(&inst, &sol);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let w: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(w["value"].as_f64().unwrap(), 0.0);
}

#[test]
fn phi_oracle_matches_the_engine_record() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("s");
    assert_eq!(solve(&repo("instances/interdiction.json"), &repo("configs/interdiction.json"), &out).status.code(), Some(0));
    let s = read_json(&out.join("outcome.json"));
    let sol = write_json(dir.path(), "x.json", &json!({"x": s["outcome"]["solution"]}));
    let o = oracle(&repo("instances/interdiction.json"), &sol);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let w: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(w["value"], s["finalPhi"]);
}

#[test]
fn phi_oracle_rejects_bad_solutions() {
    let dir = TempDir::new().unwrap();
    let short = write_json(dir.path(), "short.json", &json!({"x": [1.0]}));
    assert_eq!(oracle(&repo("instances/queueing.json"), &short).status.code(), Some(1));
    let infeasible = write_json(dir.path(), "bad.json", &json!({"x": [10.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]}));
    let o = oracle(&repo("instances/queueing.json"), &infeasible);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("infeasible"), "{}", stderr(&o));
}

#[test]
fn validate_reports_every_bundled_instance() {
    for entry in fs::read_dir(repo("instances")).unwrap() {
        let p = entry.unwrap().path();
        let o = derisk(&["validate", "--instance", arg(&p), "--config", arg(&repo("configs/theory.json"))]);
        assert_eq!(o.status.code(), Some(0), "{}: {}", p.display(), stderr(&o));
        let s: Value = serde_json::from_slice(&o.stdout).unwrap();
        assert!(s["nominalCost"].as_f64().unwrap().is_finite());
    }
}

#[test]
fn seed_override_and_timing_flags_parse() {
    let dir = TempDir::new().unwrap();
    let o = derisk(&[
        "solve",
        "--instance",
        arg(&repo("instances/queueing.json")),
        "--out",
        arg(dir.path()),
        "--seed",
        "7",
        "--timing",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}
