//! Named reproductions of the worked families, each run through check, solve and verify.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::admissibility::{LipschitzEnvelope, RadiusFunction};
use crate::bounds::{BoundFamily, Verdict};
use crate::equivalence::{evaluate, EquivalenceRow, MeasureConfig, Model};
use crate::error::{Error, Result};
use crate::functions::{Growth, Rho, ScalarFn};
use crate::scenario::{
    run_solve, verify_graph, CheckOutcome, DecayPoint, ExitStatus, PerturbationSpec, Scenario, ScenarioConfig, SolveOutcome, SystemSpec,
    VerifyOutcome,
};

pub const DEMO_NAMES: [&str; 10] =
    ["exponential", "polynomial", "rho", "mu_nu", "mixed", "constant_a", "local_exp", "local_poly", "local_rho", "local_mu_nu"];

pub const SUMMARY_TXT: &str = "summary.txt";
pub const SUMMARY_JSON: &str = "summary.json";

const RHO: Rho = Rho::Power { k: 1.0, p: 1.5 };
const MU: Growth = Growth::Power { p: 2.0 };
const NU: Growth = Growth::Power { p: 1.0 };

fn tanh(envelope: LipschitzEnvelope) -> PerturbationSpec {
    PerturbationSpec::TanhCross { envelope }
}

fn power_cross() -> PerturbationSpec {
    PerturbationSpec::PowerCross { c: 1.0, q: 2.0 }
}

/// The configuration a demo starts from, before any overrides.
pub fn demo_config(name: &str) -> Result<ScenarioConfig> {
    let (d, a, b, eps) = (1.0, -1.0, 0.0, 0.1);
    let exp = BoundFamily::Exponential { d, a, b, eps };
    let poly = BoundFamily::Polynomial { d, a, b, eps };
    let rho = BoundFamily::Rho { d, a, b, eps, rho: RHO };
    let mu_nu = BoundFamily::MuNu { d, a, b, eps, mu: MU, nu: NU };
    let mut cfg = match name {
        "exponential" => ScenarioConfig::new(name, exp, tanh(LipschitzEnvelope::ExpDecay { delta: 0.01, rate: 0.2 })),
        "polynomial" => ScenarioConfig::new(name, poly, tanh(LipschitzEnvelope::PolyDecay { delta: 0.01, p: 1.2 })),
        "rho" => ScenarioConfig::new(name, rho, tanh(LipschitzEnvelope::RhoDecay { delta: 0.01, eps: 0.1, rho: RHO })),
        "mu_nu" => ScenarioConfig::new(name, mu_nu, tanh(LipschitzEnvelope::PolyDecay { delta: 0.1, p: 2.1 })),
        "mixed" => {
            let mut c = ScenarioConfig::new(
                name,
                BoundFamily::MixedPolyShift { d, a, b, eps },
                tanh(LipschitzEnvelope::PolyDecay { delta: 0.01, p: 1.2 }),
            );
            let one = ScalarFn::constant(1.0);
            c.system = SystemSpec::Product { frak_a: ScalarFn::exp(1.0, 1.0), frak_b: one, frak_c: one, frak_d: one, numeric: false };
            c
        }
        "constant_a" => ScenarioConfig::new(
            name,
            BoundFamily::ConstantA { l: 3.0, a: -1.0, eps: 0.1, d: 1.0 },
            tanh(LipschitzEnvelope::ExpDecay { delta: 0.003, rate: 0.1 }),
        ),
        "local_exp" => local(name, exp, RadiusFunction::Exp { delta: 0.1, beta: 0.5 }),
        "local_poly" => local(name, poly, RadiusFunction::Poly { delta: 0.1, beta: 0.8 }),
        "local_rho" => local(name, rho, RadiusFunction::RhoForm { delta: 0.1, beta: 0.5, q: 2.0, rho: RHO }),
        "local_mu_nu" => local(name, mu_nu, RadiusFunction::MuPower { delta: 0.1, a: -1.0, mu: MU }),
        _ => return Err(unknown(name)),
    };
    if name == "rho" {
        cfg.solver.s_max = 5.0;
    }
    Ok(cfg)
}

fn local(name: &str, bounds: BoundFamily, radius: RadiusFunction) -> ScenarioConfig {
    let mut c = ScenarioConfig::new(name, bounds, power_cross());
    c.radius = Some(radius);
    c.solver.s_max = 5.0;
    c
}

fn unknown(name: &str) -> Error {
    Error::Config(format!("unknown demo `{name}`; available: {}", DEMO_NAMES.join(", ")))
}

/// One line of the summary table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub text: String,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemoSummary {
    pub demo: String,
    pub exit_code: i32,
    pub conditions: Vec<EquivalenceRow>,
    pub rows: Vec<SummaryRow>,
}

impl DemoSummary {
    pub fn table(&self) -> String {
        let mut out = format!("demo {} (exit {})\n", self.demo, self.exit_code);
        for r in &self.rows {
            out.push_str(&r.text);
            out.push('\n');
        }
        out
    }

    pub fn row(&self, prefix: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.text.starts_with(prefix))
    }
}

#[derive(Clone, Debug)]
pub struct DemoOutcome {
    pub scenario: Scenario,
    pub check: CheckOutcome,
    pub solve: Option<SolveOutcome>,
    pub verify: Option<VerifyOutcome>,
    pub summary: DemoSummary,
    pub status: ExitStatus,
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

fn model_of(sc: &Scenario) -> Result<Model> {
    match (&sc.config.radius, &sc.config.perturbation) {
        (Some(radius), PerturbationSpec::PowerCross { c, q }) => Ok(Model::Local { c: *c, q: *q, radius: radius.clone() }),
        _ => Ok(Model::Global(sc.envelope()?)),
    }
}

/// The largest separation along the decay curve relative to its start, and whether it stays below the bound.
fn separation_row(curve: &[DecayPoint]) -> Option<SummaryRow> {
    let first = curve.first()?;
    let ratio = curve.iter().map(|p| p.separation).fold(0.0, f64::max) / first.separation;
    let ok = curve.iter().all(|p| p.separation <= p.bound);
    let last = curve.last()?;
    Some(SummaryRow {
        text: format!(
            "separation bounded: max/initial {:.6}, final/initial {:.6}, within bound {}",
            ratio,
            last.separation / first.separation,
            verdict(ok)
        ),
        passed: ok,
    })
}

/// Runs a named demo; with `out`, writes every stage's files plus the summary.
pub fn run_demo(name: &str, overrides: &[String], out: Option<&Path>) -> Result<DemoOutcome> {
    let cfg = demo_config(name)?.with_overrides(overrides)?;
    run_demo_config(cfg, out)
}

/// [`run_demo`] for an already built configuration.
pub fn run_demo_config(cfg: ScenarioConfig, out: Option<&Path>) -> Result<DemoOutcome> {
    let name = cfg.name.clone();
    let sc = Scenario::from_config(cfg)?;
    let model = model_of(&sc)?;
    let conditions = evaluate(&name, "demo", &sc.bounds, &model, &MeasureConfig::default())?;
    let mut rows: Vec<SummaryRow> = conditions.iter().map(|c| SummaryRow { text: c.line(), passed: c.measured }).collect();

    let solved = run_solve(&sc, out)?;
    let check = solved.check.clone();
    let r = &check.report;
    rows.push(SummaryRow {
        text: format!("α = {:.7}, β = {:.7}", r.alpha, r.beta),
        passed: !r.divergent,
    });
    rows.push(SummaryRow {
        text: format!("{} gate: margin {:.7} {}", check.mode, check.gate.margin, verdict(check.gate.passed && !r.divergent)),
        passed: check.gate.passed && !r.divergent,
    });
    rows.push(SummaryRow { text: format!("decay: {:?}", r.decay.verdict), passed: r.decay.verdict == Verdict::Pass });

    let mut status = match check.status {
        ExitStatus::Divergent => ExitStatus::Fail,
        s => s,
    };
    let mut verify = None;
    if let Some(sol) = &solved.solution {
        let s = &solved;
        rows.push(SummaryRow {
            text: format!(
                "solve: {} outer iterations, error bound {:.3e}",
                sol.diagnostics.outer_distances.len(),
                sol.graph.error_bound
            ),
            passed: true,
        });
        if let Some(l) = &s.local {
            rows.push(SummaryRow {
                text: format!(
                    "local: ball α = {:.7}, ball β = {:.7}, S(s0) = {:.6}, entry radius {:.6}",
                    l.ball_alpha,
                    l.ball_beta,
                    l.s_factors.first().and_then(|f| f.value).unwrap_or(f64::INFINITY),
                    l.entry_radius.first().copied().unwrap_or(f64::NAN)
                ),
                passed: true,
            });
        }
        if matches!(sc.bounds, BoundFamily::ConstantA { .. }) {
            rows.extend(separation_row(&s.decay_curve));
        }
        let v = verify_graph(&sc, &sol.graph, out)?;
        for rec in &v.report.records {
            let shown = if rec.expected_failure { format!("{} (expected failure)", verdict(rec.passed)) } else { verdict(rec.passed).into() };
            rows.push(SummaryRow {
                text: format!("{}: worst {:.3e} vs tol {:.3e} over {} samples {}", rec.name, rec.worst_residual, rec.tolerance, rec.sampled, shown),
                passed: rec.as_expected(),
            });
        }
        status = status.worst(v.status);
        verify = Some(v);
    }
    let summary = DemoSummary { demo: name, exit_code: status.code(), conditions, rows };
    if let Some(out) = out {
        fs::create_dir_all(out)?;
        fs::write(out.join(SUMMARY_TXT), summary.table())?;
        let mut js = serde_json::to_string_pretty(&summary)?;
        js.push('\n');
        fs::write(out.join(SUMMARY_JSON), js)?;
    }
    let solve = solved.solution.is_some().then_some(solved);
    Ok(DemoOutcome { scenario: sc, check, solve, verify, summary, status })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_demo_lists_names() {
        let e = run_demo("nope", &[], None).unwrap_err();
        assert_eq!(ExitStatus::for_error(&e), ExitStatus::ConfigError);
        let msg = e.to_string();
        for n in DEMO_NAMES {
            assert!(msg.contains(n), "{msg}");
        }
    }

    #[test]
    fn every_demo_config_round_trips() {
        for n in DEMO_NAMES {
            let c = demo_config(n).unwrap();
            c.validate().unwrap();
            assert_eq!(ScenarioConfig::parse(&c.to_toml().unwrap()).unwrap(), c, "{n}");
        }
    }

    #[test]
    fn exponential_demo_summary() {
        let dir = tempfile::tempdir().unwrap();
        let o = run_demo("exponential", &[], Some(dir.path())).unwrap();
        assert_eq!(o.status, ExitStatus::Pass);
        assert!(o.summary.row("a+ε<b: −0.9 < 0 PASS").is_some(), "{}", o.summary.table());
        let text = fs::read_to_string(dir.path().join(SUMMARY_TXT)).unwrap();
        assert!(text.contains("global gate: margin 0.7046537 PASS"), "{text}");
        for f in ["admissibility.json", "manifold.csv", "manifold.json", "decay_curve.csv", "verification.json", SUMMARY_JSON] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
    }

    #[test]
    fn local_exp_below_threshold_fails_the_gate() {
        let o = run_demo("local_exp", &["radius.beta=0.075".into()], None).unwrap();
        assert_eq!(o.status.code(), 1);
        assert!(o.solve.is_none());
        assert!(o.summary.row("2ε−βq≤0: 0.05 ≤ 0 FAIL").is_some(), "{}", o.summary.table());
        assert!(!o.summary.row("local gate").unwrap().passed);
    }

    #[test]
    fn constant_a_separation_stays_bounded() {
        let o = run_demo("constant_a", &[], None).unwrap();
        assert_eq!(o.status, ExitStatus::Pass);
        assert!(o.summary.row("separation bounded").unwrap().passed);
        let curve = &o.solve.as_ref().unwrap().decay_curve;
        let first = curve[0].bound;
        assert!(curve.iter().all(|p| p.bound == first), "the bound does not decay for a constant a");
    }
}
