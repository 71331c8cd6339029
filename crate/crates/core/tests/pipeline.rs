mod common;

use std::fs;
use std::path::Path;

use invman::demos::run_demo;
use invman::scenario::{
    run_check, run_solve, run_verify, verify_graph, ExitStatus, PerturbationSpec, Scenario, ScenarioConfig, MANIFOLD_CSV,
};
use invman::bounds::BoundFamily;
use invman::admissibility::LipschitzEnvelope;

use common::*;

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

fn exp_scenario(delta: f64) -> Scenario {
    let cfg = ScenarioConfig::new(
        "exp",
        exp_bounds(),
        PerturbationSpec::TanhCross { envelope: LipschitzEnvelope::ExpDecay { delta, rate: 0.2 } },
    );
    Scenario::from_config(cfg).unwrap()
}

#[test]
fn demo_outputs_are_byte_identical_across_runs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = run_demo("exponential", &[], Some(a.path())).unwrap();
    let second = run_demo("exponential", &[], Some(b.path())).unwrap();
    assert_eq!(first.status, ExitStatus::Pass);
    assert_eq!(second.status, ExitStatus::Pass);
    let (fa, fb) = (files(a.path()), files(b.path()));
    assert!(fa.len() >= 6, "{:?}", fa.iter().map(|f| &f.0).collect::<Vec<_>>());
    assert_eq!(fa, fb);
}

#[test]
fn zero_perturbation_gives_a_zero_manifold_file() {
    let dir = tempfile::tempdir().unwrap();
    let sc = Scenario::from_config(ScenarioConfig::new("zero", exp_bounds(), PerturbationSpec::Zero)).unwrap();
    let check = run_check(&sc, None).unwrap();
    assert_eq!((check.report.alpha, check.report.beta, check.exit_code), (0.0, 0.0, 0));
    let out = run_solve(&sc, Some(dir.path())).unwrap();
    assert_eq!(out.status, ExitStatus::Pass);
    let csv = fs::read_to_string(dir.path().join(MANIFOLD_CSV)).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("s,xi_1,phi_1"));
    let mut rows = 0;
    for line in lines {
        let phi: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert_eq!(phi, 0.0, "{line}");
        rows += 1;
    }
    assert!(rows > 0);
    let v = run_verify(&sc, dir.path()).unwrap();
    assert_eq!(v.status, ExitStatus::Pass, "{:#?}", v.report);
}

#[test]
fn decay_failure_exits_one() {
    let bounds = BoundFamily::Exponential { d: 1.0, a: -0.1, b: 0.0, eps: 0.5 };
    let cfg = ScenarioConfig::new(
        "no_decay",
        bounds,
        PerturbationSpec::TanhCross { envelope: LipschitzEnvelope::ExpDecay { delta: 0.01, rate: 1.2 } },
    );
    let sc = Scenario::from_config(cfg).unwrap();
    let check = run_check(&sc, None).unwrap();
    assert_eq!(check.exit_code, 1);
}

#[test]
fn gate_failure_skips_the_solve() {
    let sc = exp_scenario(0.2);
    let out = run_solve(&sc, None).unwrap();
    assert_eq!(out.status, ExitStatus::Fail);
    assert!(out.solution.is_none());
    assert!(!out.check.gate.passed);
}

#[test]
fn verify_without_a_manifold_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let err = run_verify(&exp_scenario(0.01), dir.path()).unwrap_err();
    assert_eq!(ExitStatus::for_error(&err).code(), 2);
}

#[test]
fn exponential_solve_converges_quickly_and_verifies() {
    let sc = exp_scenario(0.01);
    let out = run_solve(&sc, None).unwrap();
    let sol = out.solution.as_ref().unwrap();
    let g = &sol.graph;
    assert!(g.outer_iterations <= 10, "{}", g.outer_iterations);
    assert!(sol.diagnostics.q < 0.0142 + 1e-4);
    assert!(g.zero_at_origin());
    assert!(!out.decay_curve.is_empty());
    assert!(out.decay_curve.iter().all(|p| p.separation <= p.bound * 1.05 + 1e-12));
    let v = verify_graph(&sc, g, None).unwrap();
    assert_eq!(v.status, ExitStatus::Pass, "{:#?}", v.report);
    assert!(v.report.records.iter().any(|r| r.expected_failure && !r.passed));
}

#[test]
fn local_demo_records_s_factors_and_entry_radii() {
    let out = run_demo("local_exp", &[], None).unwrap();
    assert_eq!(out.status, ExitStatus::Pass, "{}", out.summary.table());
    let local = out.solve.as_ref().unwrap().local.as_ref().unwrap();
    assert!(!local.s_factors.is_empty());
    assert_eq!(local.entry_radius.len(), local.solution.graph.active_len);
    assert!(local.s_factors.iter().all(|f| f.value.unwrap() >= 1.0));
    assert!(out.verify.as_ref().unwrap().report.record("out_of_ball_control").is_some());
}
