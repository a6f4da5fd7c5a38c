mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use clqg::cli::{load_result, EXIT_BRACKET, EXIT_INVALID, EXIT_OK};
use clqg::Scenario;

fn bundled(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("problems")
        .join(name)
}

fn clqg(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clqg"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn building_args<'a>(cmd: &'a str, problem: &'a Path) -> Vec<&'a str> {
    vec![cmd, "--problem", problem.to_str().unwrap()]
}

#[test]
fn solve_defaults_on_building() {
    let dir = tempfile::tempdir().unwrap();
    let problem = bundled("building.json");
    let out = clqg(&building_args("solve", &problem), dir.path());
    assert_eq!(out.status.code(), Some(EXIT_OK));
    assert!(
        out.stderr.is_empty(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let file = load_result(&dir.path().join("result.json")).unwrap();
    assert_eq!(file.result.scenario, Scenario::Active);
    assert!((file.result.lambda_star - 0.2448).abs() <= 0.01);
    assert_eq!(file.result.gains.len(), 1000);
}

#[test]
fn loose_constraint_is_inactive() {
    let dir = tempfile::tempdir().unwrap();
    let problem = bundled("building.json");
    let mut args = building_args("solve", &problem);
    args.extend(["--gamma", "1e6"]);
    let out = clqg(&args, dir.path());
    assert_eq!(out.status.code(), Some(EXIT_OK));
    let file = load_result(&dir.path().join("result.json")).unwrap();
    assert_eq!(file.result.scenario, Scenario::Inactive);
    assert_eq!(file.result.lambda_star, 0.0);
}

#[test]
fn unreachable_constraint_fails_to_bracket() {
    let dir = tempfile::tempdir().unwrap();
    let problem = bundled("building.json");
    let mut args = building_args("solve", &problem);
    args.extend(["--gamma", "0"]);
    let out = clqg(&args, dir.path());
    assert_eq!(out.status.code(), Some(EXIT_BRACKET));
    assert!(!out.stderr.is_empty());
}

#[test]
fn sweep_grids() {
    let dir = tempfile::tempdir().unwrap();
    let problem = bundled("building.json");
    let mut args = building_args("sweep", &problem);
    args.extend(["--grid", "0:1:0"]);
    let out = clqg(&args, dir.path());
    assert_eq!(out.status.code(), Some(EXIT_OK));
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], "lambda,f,Jp,C");
    let fields: Vec<f64> = lines[1].split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(fields.len(), 4);
    assert_eq!(fields[0], 0.0);
    assert!(fields[1] > 0.0);

    let mut bad = building_args("sweep", &problem);
    bad.extend(["--grid=-1:0.5:1"]);
    let out = clqg(&bad, dir.path());
    assert_eq!(out.status.code(), Some(EXIT_INVALID));
}

#[test]
fn missing_problem_field_is_invalid() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.json");
    std::fs::write(&path, r#"{ "n": 1, "m": 1 }"#).unwrap();
    let out = clqg(&building_args("solve", &path), dir.path());
    assert_eq!(out.status.code(), Some(EXIT_INVALID));
    assert!(String::from_utf8_lossy(&out.stderr).contains('N'));
}

#[test]
fn simulate_is_reproducible() {
    let problem = bundled("building.json");
    let mut args = building_args("simulate", &problem);
    args.extend(["--samples", "200", "--seed", "3"]);
    let runs: Vec<_> = (0..2)
        .map(|_| {
            let dir = tempfile::tempdir().unwrap();
            let out = clqg(&args, dir.path());
            assert_eq!(out.status.code(), Some(EXIT_OK));
            let read = |f: &str| std::fs::read_to_string(dir.path().join(f)).unwrap();
            (read("trajectory.csv"), read("histogram.csv"))
        })
        .collect();
    assert_eq!(runs[0], runs[1]);

    let (traj, hist) = &runs[0];
    assert!(traj.starts_with("k,x_1,x_2,x_3,x_4,u_1\n"));
    assert_eq!(traj.lines().count(), 1002);
    assert!(traj.lines().last().unwrap().ends_with(','));
    assert_eq!(hist.lines().count(), 201);
    for line in hist.lines().skip(1) {
        let v: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        assert_eq!(v.len(), 3);
    }
}

#[test]
fn single_noiseless_sample_equals_analytic_cost() {
    let dir = tempfile::tempdir().unwrap();
    let s = common::Scalar {
        v: 0.0,
        w: 0.0,
        gamma: 0.5,
        ..common::Scalar::random(8, 6)
    };
    let p = s.problem();
    let path = dir.path().join("scalar.json");
    std::fs::write(&path, p.to_json()).unwrap();

    let out = clqg(&building_args("solve", &path), dir.path());
    assert_eq!(out.status.code(), Some(EXIT_OK));
    let result_path = dir.path().join("result.json");
    let mut args = building_args("simulate", &path);
    args.extend(["--samples", "1", "--result", result_path.to_str().unwrap()]);
    let out = clqg(&args, dir.path());
    assert_eq!(out.status.code(), Some(EXIT_OK));

    let gains: Vec<f64> = load_result(&result_path)
        .unwrap()
        .result
        .gains
        .iter()
        .map(|g| g[(0, 0)])
        .collect();
    let (jp, c) = s.costs(&gains);
    let hist = std::fs::read_to_string(dir.path().join("histogram.csv")).unwrap();
    let rows: Vec<&str> = hist.lines().skip(1).collect();
    assert_eq!(rows.len(), 1);
    let v: Vec<f64> = rows[0].split(',').map(|x| x.parse().unwrap()).collect();
    assert!(common::rel_close(v[1], jp, 1e-12));
    assert!(common::rel_close(v[2], c, 1e-12));
}

#[test]
fn verify_certifies_building() {
    let dir = tempfile::tempdir().unwrap();
    let problem = bundled("building.json");
    let out = clqg(&building_args("verify", &problem), dir.path());
    assert_eq!(out.status.code(), Some(EXIT_OK));
    let text = std::fs::read_to_string(dir.path().join("verify.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["certified"], serde_json::Value::Bool(true));
    assert!(v["kkt"]["stationarity_resid"].as_f64().unwrap() <= 1e-8);
}

#[test]
fn bad_flags_are_invalid_arguments() {
    let dir = tempfile::tempdir().unwrap();
    let out = clqg(&["solve", "--bogus"], dir.path());
    assert_eq!(out.status.code(), Some(EXIT_INVALID));
}
