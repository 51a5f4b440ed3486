use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_conicsqp")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn solve_converges_near_two() {
    let o = run(&["solve", "ex55", "--x0", "1.9", "--lam0", "0"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.contains("status: Converged"), "{out}");
    assert!(out.contains("rate: Quadratic") || out.contains("rate: Superlinear"), "{out}");
    // first step of Newton on −x + x²/2 = 0 from 1.9 is 0.095/0.9
    assert!(out.contains("1.06e-1"), "{out}");
}

#[test]
fn solve_reports_solvability_failure() {
    let o = run(&["solve", "ex55", "--x0", "0.1", "--lam0", "0"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.contains("SOLVABILITY FAILURE at k = 0"), "{out}");
    assert!(out.contains("NoKKTPoint"), "{out}");
}

#[test]
fn solve_with_defaults_takes_one_step() {
    let o = run(&["solve", "qp_orthant"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("Converged after 1 step(s)"));
}

#[test]
fn diagnose_examples() {
    let out = stdout(&run(&["diagnose", "ex55", "--x", "2", "--lam", "0"]));
    assert!(out.contains("SSOC: holds") && out.contains("SRCQ: holds") && out.contains("noncritical"), "{out}");
    assert!(out.contains("consistent: true"), "{out}");

    let out = stdout(&run(&["diagnose", "ex55", "--x", "0", "--lam", "0"]));
    assert!(out.contains("SSOC: fails (min value -1)") && out.contains("SRCQ: holds"), "{out}");

    let o = run(&["diagnose", "critical_toy", "--x", "0", "--lam", "-1"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("multiplier: critical, witness"), "{}", stdout(&o));
}

#[test]
fn gate_and_usage_errors_exit_two() {
    let o = run(&["diagnose", "ex55", "--x", "1", "--lam", "0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("exceeds gate"));
    assert_eq!(run(&["solve", "no_such_problem"]).status.code(), Some(2));
    assert_eq!(run(&["solve", "ex55", "--x0", "1,2"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["oracle-check", "--cone", "cube3"]).status.code(), Some(2));
}

#[test]
fn malformed_problem_file_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"name": "bad", "n": 1, "objective": "x1^2", "constraints": [{"expr": "x1"}]}"#).unwrap();
    let o = run(&["solve", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("cone"), "{}", stderr(&o));
}

#[test]
fn problem_files_load() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.json");
    std::fs::write(
        &path,
        r#"{"name": "shifted", "n": 2, "objective": "0.5*(x1 - 1)^2 + 0.5*(x2 + 1)^2",
            "constraints": [{"expr": "x1"}, {"expr": "x2"}],
            "cone": {"blocks": [{"kind": "orthant", "dim": 2}]},
            "reference": {"x": [1, 0], "lam": [0, -1]}}"#,
    )
    .unwrap();
    let o = run(&["solve", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("Converged"));
    let o = run(&["diagnose", path.to_str().unwrap(), "--no-probe"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("SSOC: holds"));
}

#[test]
fn json_reports_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for (path, jobs) in [(&a, "1"), (&b, "3")] {
        let o = run(&["diagnose", "critical_toy", "--x", "0", "--lam", "-1", "--seed", "4", "--jobs", jobs, "--json", path.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0));
    }
    let (ta, tb) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(ta, tb);
    let v: Value = serde_json::from_slice(&ta).unwrap();
    assert_eq!(v["command"], "diagnose");
    assert_eq!(v["seed"], 4);
    assert_eq!(v["inputs_digest"].as_str().unwrap().len(), 64);
    assert_eq!(v["failures"].as_array().unwrap().len(), 0);
    assert_eq!(v["result"]["noncritical"]["holds"], false);
}

#[test]
fn oracle_check_passes_per_cone() {
    let o = run(&["oracle-check", "--cone", "soc3", "--n", "100", "--seed", "7"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let o = run(&["oracle-check", "--cone", "orthant4", "--cone", "zero2", "--n", "50"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.contains("orthant4") && out.contains("zero2") && out.contains("max deviation 0.00e0"), "{out}");
}

#[test]
fn probe_and_listing() {
    let o = run(&["probe-calmness", "ex55", "--x", "0", "--lam", "0", "--directions", "2"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("profile: bounded"), "{}", stdout(&o));
    let out = stdout(&run(&["list-problems"]));
    for name in ["ex55", "critical_toy", "qp_orthant", "soc_toy", "soc_degenerate"] {
        assert!(out.contains(name));
    }
}
