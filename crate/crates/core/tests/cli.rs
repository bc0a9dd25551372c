mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::fixture;
use valuetree::cli::exit;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_valuetree")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn report(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn build_is_deterministic_and_reports_seed_and_hash() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for d in [&a, &b] {
        ok(&["build", "--system", "single_integrator", "--max-vertices", "300", "--seed", "7", "--output-dir", p(d)]);
    }
    assert_eq!(
        std::fs::read(a.join("store.json")).unwrap(),
        std::fs::read(b.join("store.json")).unwrap()
    );
    let r = report(&a.join("build_report.json"));
    assert_eq!(r["seed"], 7);
    assert_eq!(r["vertices"], 300);
    assert_eq!(r["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn config_file_values_yield_to_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "system = \"single_integrator\"\nmax_vertices = 50\nseed = 1\n").unwrap();
    ok(&["build", "--config", p(&cfg), "--max-vertices", "80", "--output-dir", p(dir.path())]);
    let r = report(&dir.path().join("build_report.json"));
    assert_eq!(r["vertices"], 80);
    assert_eq!(r["seed"], 1);

    std::fs::write(&cfg, "max_vertexes = 50\n").unwrap();
    let out = run(&["build", "--config", p(&cfg), "--output-dir", p(dir.path())]);
    assert_eq!(out.status.code(), Some(exit::MALFORMED));
}

#[test]
fn exit_codes_separate_missing_from_malformed() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("none.json");
    let out = run(&["build", "--system", &format!("mlp:{}", p(&missing))]);
    assert_eq!(out.status.code(), Some(exit::MISSING_FILE));
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{ not json").unwrap();
    let out = run(&["build", "--system", &format!("mlp:{}", p(&bad))]);
    assert_eq!(out.status.code(), Some(exit::MALFORMED));
    let out = run(&["build", "--system", "cartpole"]);
    assert_eq!(out.status.code(), Some(exit::CONFIG));
    let out = run(&["inspect", "--store", p(&missing)]);
    assert_eq!(out.status.code(), Some(exit::MISSING_FILE));
    let out = run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(exit::USAGE));
}

#[test]
fn root_only_store_exports_one_row() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["build", "--max-vertices", "1", "--output-dir", p(dir.path())]);
    let csv = ok(&["export-values", "--store", p(&dir.path().join("store.json"))]);
    assert_eq!(csv, "x0,x1,J\n0,0,0\n");
}

#[test]
fn export_rows_match_the_modify_report() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store.json");
    ok(&["build", "--max-vertices", "500", "--seed", "2", "--output-dir", p(dir.path())]);
    let csv = ok(&["export-values", "--store", p(&store)]);
    assert_eq!(csv.lines().count(), 501);

    ok(&[
        "modify",
        "--store",
        p(&store),
        "--constraints",
        p(&fixture("u_obstacle.json")),
        "--output-dir",
        p(dir.path()),
    ]);
    let r = report(&dir.path().join("modify_report.json"));
    let unreachable = r["unreachable"].as_u64().unwrap() as usize;
    assert!(unreachable > 0);
    let csv = ok(&["export-values", "--store", p(&store)]);
    assert_eq!(csv.lines().count() - 1, 500 - unreachable);

    let all = ok(&["export-values", "--store", p(&store), "--include-infinite"]);
    let lines: Vec<&str> = all.lines().collect();
    assert_eq!(lines[0], "x0,x1,J,finite");
    assert_eq!(lines.len() - 1, 500);
    assert_eq!(lines.iter().filter(|l| l.ends_with(",inf,0")).count(), unreachable);

    ok(&[
        "modify",
        "--store",
        p(&store),
        "--constraints",
        p(&fixture("empty_constraints.json")),
        "--output-dir",
        p(dir.path()),
    ]);
    assert_eq!(ok(&["export-values", "--store", p(&store)]).lines().count(), 501);
}

#[test]
fn modify_rejects_constraints_of_the_wrong_dimension() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store.json");
    ok(&["build", "--max-vertices", "20", "--output-dir", p(dir.path())]);
    let out = run(&[
        "modify",
        "--store",
        p(&store),
        "--constraints",
        p(&fixture("pendulum_limit_1.json")),
        "--output-dir",
        p(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(exit::CONFIG));
}

#[test]
fn pendulum_export_replicates_across_the_angle_seam() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store.json");
    ok(&["build", "--system", "pendulum", "--max-vertices", "40", "--output-dir", p(dir.path())]);
    let plain = ok(&["export-values", "--store", p(&store)]);
    let copies = ok(&["export-values", "--store", p(&store), "--replicate"]);
    assert_eq!(copies.lines().count() - 1, 3 * (plain.lines().count() - 1));
    ok(&[
        "modify",
        "--store",
        p(&store),
        "--constraints",
        p(&fixture("pendulum_limit_1.json")),
        "--output-dir",
        p(dir.path()),
    ]);
    let text = ok(&["inspect", "--store", p(&store)]);
    assert!(text.contains("vertices: 40"));
    assert!(text.contains("invariants: ok"));
}

#[test]
fn zero_horizon_simulation_is_empty() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store.json");
    ok(&["build", "--system", "pendulum", "--max-vertices", "50", "--output-dir", p(dir.path())]);
    let csv = dir.path().join("t.csv");
    ok(&[
        "simulate",
        "--store",
        p(&store),
        "--x0",
        "pi,0",
        "--horizon",
        "0",
        "--out",
        p(&csv),
        "--output-dir",
        p(dir.path()),
    ]);
    assert_eq!(
        std::fs::read_to_string(&csv).unwrap(),
        "step,x0,x1,u0,stage_cost,cumulative_cost\n0,-3.14159265,0,,0,0\n"
    );
    let r = report(&dir.path().join("simulate_summary.json"));
    assert_eq!(r["total_cost"], 0.0);
    assert_eq!(r["steps"], 0);
}

#[test]
fn simulate_plans_on_the_network_and_runs_the_physics() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store.json");
    let weights = format!("mlp:{}", p(&fixture("pendulum_mlp.json")));
    ok(&["build", "--system", &weights, "--max-vertices", "60", "--output-dir", p(dir.path())]);
    let out = run(&[
        "simulate",
        "--store",
        p(&store),
        "--x0",
        "0.1,0",
        "--horizon",
        "5",
        "--exec-system",
        "pendulum",
        "--output-dir",
        p(dir.path()),
    ]);
    assert!(out.status.code().is_some());
    let r = report(&dir.path().join("simulate_summary.json"));
    assert_eq!(r["plan_system"], "mlp");
    assert_eq!(r["exec_system"], "pendulum");
    let out = run(&["simulate", "--store", p(&store), "--x0", "0,0", "--plan-system", "pendulum"]);
    assert_eq!(out.status.code(), Some(exit::CONFIG));
}
