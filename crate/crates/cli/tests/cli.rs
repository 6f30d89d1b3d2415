//! End-to-end behaviour of the `fedflex` binary.

use std::path::Path;
use std::process::{Command, Output};

use fedflex_core::instances::save_instance;
use fedflex_core::model::{Agent, CouplingConstraint, CouplingKind, LocalBox, ProblemInstance, QuadraticCost, Term};
use serde_json::Value;

fn fedflex(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedflex"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn read_json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn pair(a1: f64, a2: f64, rhs: f64, upper: f64) -> ProblemInstance {
    let agents = vec![
        Agent::new(
            0,
            vec![QuadraticCost::new(a1, 0.0, 0.0)],
            LocalBox::uniform(1, 0.0, upper),
        ),
        Agent::new(
            1,
            vec![QuadraticCost::new(a2, 0.0, 0.0)],
            LocalBox::uniform(1, 0.0, upper),
        ),
    ];
    let row = CouplingConstraint::with_equal_shares(
        CouplingKind::Equality,
        vec![Term::new(0, 0, 1.0), Term::new(1, 0, 1.0)],
        rhs,
    );
    ProblemInstance::new(agents, vec![row])
}

fn ring4_instance(dir: &Path) {
    let out = fedflex(
        dir,
        &[
            "generate",
            "dispatch",
            "--n",
            "4",
            "--demand",
            "4.8",
            "--a-min",
            "0.5",
            "--a-max",
            "2",
            "--b-min",
            "-1",
            "--b-max",
            "1",
            "--bounded-fraction",
            "0.5",
            "--lower-max",
            "0.5",
            "--upper-max",
            "2",
            "--seed",
            "4",
            "-o",
            "r4.json",
        ],
    );
    assert!(out.status.success());
}

#[test]
fn generate_is_valid_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["generate", "dispatch", "--n", "2", "--demand", "2", "--seed", "1", "-o"];
    assert!(fedflex(dir.path(), &[&args[..], &["a.json"]].concat()).status.success());
    assert!(fedflex(dir.path(), &[&args[..], &["b.json"]].concat()).status.success());
    let a = std::fs::read(dir.path().join("a.json")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b.json")).unwrap());
    fedflex_core::instances::load_instance(dir.path().join("a.json")).unwrap();
}

#[test]
fn infeasible_generation_fails_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let out = fedflex(
        dir.path(),
        &[
            "generate",
            "dispatch",
            "--n",
            "2",
            "--demand",
            "9",
            "--bounded-fraction",
            "1",
            "-o",
            "x.json",
        ],
    );
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("infeasible"));
    assert!(!dir.path().join("x.json").exists());
}

#[test]
fn solve_symmetric_pair() {
    let dir = tempfile::tempdir().unwrap();
    fedflex(
        dir.path(),
        &[
            "generate", "dispatch", "--n", "2", "--demand", "2", "--seed", "1", "-o", "i.json",
        ],
    );
    let out = fedflex(dir.path(), &["solve", "i.json", "--topology", "ring:2", "-o", "run"]);
    assert_eq!(out.status.code(), Some(0));
    let report = read_json(dir.path().join("run.report.json"));
    assert_eq!(report["status"], "converged");
    for v in report["x"].as_array().unwrap() {
        assert!((v.as_f64().unwrap() - 1.0).abs() <= 1e-4);
    }
    let trace = std::fs::read_to_string(dir.path().join("run.trace.csv")).unwrap();
    assert!(trace.starts_with("iter,kkt_stationarity,"));
    assert!(dir.path().join("run.messages.csv").exists());
}

#[test]
fn iteration_cap_is_not_convergence() {
    let dir = tempfile::tempdir().unwrap();
    fedflex(
        dir.path(),
        &[
            "generate", "dispatch", "--n", "2", "--demand", "2", "--seed", "1", "-o", "i.json",
        ],
    );
    let out = fedflex(
        dir.path(),
        &[
            "solve",
            "i.json",
            "--topology",
            "ring:2",
            "--max-iter",
            "1",
            "-o",
            "run",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(
        read_json(dir.path().join("run.report.json"))["status"],
        "max-iterations"
    );
}

#[test]
fn divergence_has_its_own_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    fedflex(
        dir.path(),
        &[
            "generate", "dispatch", "--n", "2", "--demand", "2", "--seed", "1", "-o", "i.json",
        ],
    );
    let out = fedflex(
        dir.path(),
        &["solve", "i.json", "--topology", "ring:2", "--rho-i", "5", "-o", "run"],
    );
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(read_json(dir.path().join("run.report.json"))["status"], "diverged");
}

#[test]
fn invalid_inputs_exit_four() {
    let dir = tempfile::tempdir().unwrap();
    let out = fedflex(
        dir.path(),
        &["solve", "missing.json", "--topology", "ring:2", "-o", "run"],
    );
    assert_eq!(out.status.code(), Some(4));
    fedflex(
        dir.path(),
        &["generate", "dispatch", "--n", "2", "--demand", "2", "-o", "i.json"],
    );
    let out = fedflex(dir.path(), &["solve", "i.json", "--topology", "ring:3", "-o", "run"]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn async_two_agents_matches_sync() {
    let dir = tempfile::tempdir().unwrap();
    save_instance(&pair(1.0, 2.0, 3.0, 10.0), dir.path().join("p.json")).unwrap();
    let sync = fedflex(dir.path(), &["solve", "p.json", "--topology", "ring:2", "-o", "s"]);
    let asy = fedflex(
        dir.path(),
        &[
            "solve",
            "p.json",
            "--topology",
            "ring:2",
            "--clusters",
            "0,1",
            "--period",
            "5",
            "-o",
            "a",
        ],
    );
    assert!(sync.status.success() && asy.status.success());
    let xs = read_json(dir.path().join("s.report.json"))["x"].clone();
    let xa = read_json(dir.path().join("a.report.json"))["x"].clone();
    for (p, q) in xs.as_array().unwrap().iter().zip(xa.as_array().unwrap()) {
        assert!((p.as_f64().unwrap() - q.as_f64().unwrap()).abs() <= 1e-3);
    }
}

#[test]
fn oracle_check_reports_solution_and_residual() {
    let dir = tempfile::tempdir().unwrap();
    save_instance(&pair(1.0, 2.0, 3.0, f64::INFINITY), dir.path().join("p.json")).unwrap();
    let out = fedflex(dir.path(), &["oracle-check", "p.json"]);
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["status"], "solved");
    let x: Vec<f64> = serde_json::from_value(v["x"].clone()).unwrap();
    assert!((x[0] - 2.0).abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12);
    assert!((v["lambda"][0].as_f64().unwrap() + 4.0).abs() < 1e-12);
    assert!(v["kkt_max_abs"].as_f64().unwrap() <= 1e-8);
}

#[test]
fn oracle_check_lists_active_bounds_and_infeasibility() {
    let dir = tempfile::tempdir().unwrap();
    save_instance(&pair(1.0, 2.0, 3.0, 1.5), dir.path().join("box.json")).unwrap();
    let out = fedflex(dir.path(), &["oracle-check", "box.json"]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(
        v["active_set"],
        serde_json::json!([{ "type": "upper", "agent": 0, "var": 0 }])
    );

    save_instance(&pair(1.0, 2.0, 5.0, 1.0), dir.path().join("bad.json")).unwrap();
    let out = fedflex(dir.path(), &["oracle-check", "bad.json"]);
    assert_eq!(out.status.code(), Some(4));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["status"], "infeasible");
}

#[test]
fn compare_ring4_saves_messages() {
    let dir = tempfile::tempdir().unwrap();
    ring4_instance(dir.path());
    let out = fedflex(
        dir.path(),
        &[
            "compare",
            "r4.json",
            "--topology",
            "ring:4",
            "--clusters",
            "0,1;2,3",
            "--period",
            "5",
            "-o",
            "c",
        ],
    );
    assert_eq!(out.status.code(), Some(0));
    let v = read_json(dir.path().join("c.compare.json"));
    let b = &v["equal_budget"];
    assert!(b["async_messages"].as_u64() < b["sync_messages"].as_u64());
    assert_eq!(b["prediction_exact"], true);
    for r in v["runs"].as_array().unwrap() {
        assert_eq!(r["status"], "converged");
    }
}

#[test]
fn compare_single_cluster_gives_identical_traces() {
    let dir = tempfile::tempdir().unwrap();
    ring4_instance(dir.path());
    let out = fedflex(
        dir.path(),
        &[
            "compare",
            "r4.json",
            "--topology",
            "ring:4",
            "--clusters",
            "0,1,2,3",
            "--period",
            "1",
            "-o",
            "c",
        ],
    );
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(
        std::fs::read(dir.path().join("c.sync.trace.csv")).unwrap(),
        std::fs::read(dir.path().join("c.async.trace.csv")).unwrap()
    );
}

#[test]
fn compare_with_straggler_still_converges() {
    let dir = tempfile::tempdir().unwrap();
    ring4_instance(dir.path());
    let out = fedflex(
        dir.path(),
        &[
            "compare",
            "r4.json",
            "--topology",
            "ring:4",
            "--clusters",
            "0,1;2,3",
            "--period",
            "5",
            "--straggler",
            "0:10",
            "-o",
            "c",
        ],
    );
    assert_eq!(out.status.code(), Some(0));
    let v = read_json(dir.path().join("c.compare.json"));
    let runs = v["runs"].as_array().unwrap();
    let iters = |label: &str| {
        runs.iter().find(|r| r["label"] == label).unwrap()["iterations_run"]
            .as_u64()
            .unwrap()
    };
    assert!(iters("sync") >= iters("sync-no-stragglers"));
    assert!(v["straggler_slowdown"].as_f64().unwrap() >= 1.0);
}

#[test]
fn compare_requires_an_async_schedule() {
    let dir = tempfile::tempdir().unwrap();
    ring4_instance(dir.path());
    let out = fedflex(dir.path(), &["compare", "r4.json", "--topology", "ring:4", "-o", "c"]);
    assert_eq!(out.status.code(), Some(4));
}
