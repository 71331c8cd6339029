//! Parameter conditions stated for the closed-form families, measured numerically.
//!
//! Every measurement goes through the generic quadrature and sup searches, never the
//! closed-form shortcuts, so a stated equivalence and its measurement are independent.

use serde::{Deserialize, Serialize};

use crate::admissibility::{compute_alpha, compute_beta, s_sup_numeric, LipschitzEnvelope, QuadratureConfig, RadiusFunction};
use crate::bounds::{check_decay_condition, BoundFamily, Verdict};
use crate::error::{Error, Result};
use crate::functions::{Growth, Rho};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Op {
    Lt,
    Le,
}

impl Op {
    pub fn holds(self, lhs: f64, rhs: f64) -> bool {
        match self {
            Op::Lt => lhs < rhs,
            Op::Le => lhs <= rhs,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Op::Lt => "<",
            Op::Le => "≤",
        }
    }
}

/// What a stated condition is claimed to control.
#[derive(Clone, Debug, PartialEq)]
pub enum Measure {
    /// `a(t,s) b(t,s) -> 0`.
    Decay,
    AlphaFinite,
    BetaFinite,
    /// `sup_{t>=s} a(t,s) R(s)/R(t)` finite at the probe times.
    SFinite,
    All(Vec<Measure>),
    /// The measure evaluated with a different radius.
    WithRadius(Box<Measure>, RadiusFunction),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Condition {
    pub label: String,
    pub lhs: f64,
    pub op: Op,
    pub rhs: f64,
    pub measure: Measure,
    /// Only `stated ⇒ measured` is claimed.
    pub implication: bool,
}

impl Condition {
    fn iff(label: &str, lhs: f64, op: Op, rhs: f64, measure: Measure) -> Self {
        Condition { label: label.into(), lhs, op, rhs, measure, implication: false }
    }

    fn implies(label: &str, lhs: f64, op: Op, rhs: f64, measure: Measure) -> Self {
        Condition { label: label.into(), lhs, op, rhs, measure, implication: true }
    }

    pub fn stated(&self) -> bool {
        self.op.holds(self.lhs, self.rhs)
    }
}

/// A perturbation model as far as the conditions are concerned.
#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    /// A global Lipschitz envelope.
    Global(LipschitzEnvelope),
    /// `‖f(u)−f(v)‖ ≤ c‖u−v‖(‖u‖+‖v‖)^q` on balls of radius `R`.
    Local { c: f64, q: f64, radius: RadiusFunction },
}

impl Model {
    fn envelope(&self) -> LipschitzEnvelope {
        match self {
            Model::Global(e) => e.clone(),
            Model::Local { c, q, radius } => LipschitzEnvelope::BallPower { c: *c, q: *q, radius: radius.clone() },
        }
    }

    fn with_radius(&self, r: &RadiusFunction) -> Model {
        match self {
            Model::Local { c, q, .. } => Model::Local { c: *c, q: *q, radius: r.clone() },
            other => other.clone(),
        }
    }
}

fn growth_exponent(g: Growth) -> (bool, f64) {
    match g {
        Growth::Exp { rate } => (true, rate),
        Growth::Power { p } => (false, p),
    }
}

/// `lim μ^{a-b} ν^ε = 0` as a sign condition on the leading exponent, where one exists.
fn mu_nu_decay_exponent(a: f64, b: f64, eps: f64, mu: Growth, nu: Growth) -> Option<f64> {
    let ((me, m), (ne, n)) = (growth_exponent(mu), growth_exponent(nu));
    match (me, ne) {
        (true, true) | (false, false) => Some(m * (a - b) + n * eps),
        (true, false) => Some(a - b),
        (false, true) => None,
    }
}

/// The conditions stated for a family, with their parameter values filled in.
pub fn stated_conditions(bounds: &BoundFamily, model: &Model) -> Vec<Condition> {
    use Measure::*;
    let mut out = Vec::new();
    match bounds {
        BoundFamily::Exponential { a, b, eps, .. }
        | BoundFamily::Polynomial { a, b, eps, .. }
        | BoundFamily::Rho { a, b, eps, .. }
        | BoundFamily::MixedPolyShift { a, b, eps, .. } => out.push(Condition::iff("a+ε<b", a + eps - b, Op::Lt, 0.0, Decay)),
        BoundFamily::MuNu { a, b, eps, mu, nu, .. } => {
            if let Some(e) = mu_nu_decay_exponent(*a, *b, *eps, *mu, *nu) {
                out.push(Condition::iff("μ(t)^{a−b}ν(t)^ε → 0", e, Op::Lt, 0.0, Decay));
            }
        }
        BoundFamily::ExpPolyB { a, .. } => {
            if matches!(model, Model::Global(_)) {
                out.push(Condition::implies("a<0 ⇒ all conditions", *a, Op::Lt, 0.0, All(vec![Decay, AlphaFinite, BetaFinite])));
            }
        }
        BoundFamily::ConstantA { a, .. } => {
            if matches!(model, Model::Global(_)) {
                out.push(Condition::implies("a<0 ⇒ all conditions", *a, Op::Lt, 0.0, All(vec![Decay, AlphaFinite, BetaFinite])));
            }
        }
        BoundFamily::ProductForm { .. } | BoundFamily::Tabulated(_) => {}
    }
    let Model::Local { q, radius, .. } = model else {
        return out;
    };
    let q = *q;
    match (bounds, radius) {
        (BoundFamily::Exponential { a, eps, .. }, RadiusFunction::Exp { beta, .. }) => {
            out.push(Condition::iff("ε−βq<0", eps - beta * q, Op::Lt, 0.0, AlphaFinite));
            out.push(Condition::iff("2ε−βq≤0", 2.0 * eps - beta * q, Op::Le, 0.0, BetaFinite));
            out.push(Condition::iff("a+β≤0", a + beta, Op::Le, 0.0, SFinite));
        }
        (BoundFamily::Polynomial { a, eps, .. }, RadiusFunction::Poly { beta, delta }) => {
            out.push(Condition::iff("ε+1−βq<0", eps + 1.0 - beta * q, Op::Lt, 0.0, AlphaFinite));
            out.push(Condition::iff("2ε+1−βq≤0", 2.0 * eps + 1.0 - beta * q, Op::Le, 0.0, BetaFinite));
            out.push(Condition::iff("a+β≤0", a + beta, Op::Le, 0.0, SFinite));
            let lowest = RadiusFunction::Poly { delta: *delta, beta: (2.0 * eps + 1.0) / q };
            out.push(Condition::iff(
                "(2ε+1)/q≤−a",
                (2.0 * eps + 1.0) / q,
                Op::Le,
                -a,
                WithRadius(Box::new(All(vec![AlphaFinite, BetaFinite, SFinite])), lowest),
            ));
        }
        (BoundFamily::MixedPolyShift { a, eps, .. }, RadiusFunction::Poly { beta, .. }) => {
            out.push(Condition::implies("2ε+1−βq≤0 ⇒ α,β<∞", 2.0 * eps + 1.0 - beta * q, Op::Le, 0.0, All(vec![AlphaFinite, BetaFinite])));
            out.push(Condition::implies("a+β≤0 ⇒ S<∞", a + beta, Op::Le, 0.0, SFinite));
        }
        (BoundFamily::Rho { a, eps, rho, .. }, RadiusFunction::RhoForm { beta, q: qr, rho: rr, .. }) if rho == rr && *qr == q => {
            out.push(Condition::iff("ε−βq<0", eps - beta * q, Op::Lt, 0.0, AlphaFinite));
            out.push(Condition::iff("2ε−βq≤0", 2.0 * eps - beta * q, Op::Le, 0.0, BetaFinite));
            if rho_derivative_nondecreasing(rho) {
                out.push(Condition::implies("a+β<0 ⇒ S<∞", a + beta, Op::Lt, 0.0, SFinite));
            }
        }
        (BoundFamily::MuNu { eps, mu, nu, .. }, RadiusFunction::MuPower { a: ar, mu: mr, .. }) if mu == mr => {
            let ((me, m), (ne, n)) = (growth_exponent(*mu), growth_exponent(*nu));
            // ∫ μ^{aq} ν^ε finite: power growth needs exponent below −1, exponential below 0
            let integrable = match (me, ne) {
                (false, false) => Some((m * ar * q + n * eps, -1.0)),
                (true, true) => Some((m * ar * q + n * eps, 0.0)),
                (true, false) => Some((m * ar * q, 0.0)),
                (false, true) => None,
            };
            if let Some((lhs, rhs)) = integrable {
                out.push(Condition::implies("∫μ^{aq}ν^ε<∞ ⇒ α,β,S<∞", lhs, Op::Lt, rhs, All(vec![AlphaFinite, BetaFinite, SFinite])));
            }
        }
        _ => {}
    }
    out
}

fn rho_derivative_nondecreasing(rho: &Rho) -> bool {
    match rho {
        Rho::Linear { .. } => true,
        Rho::Power { p, .. } => *p >= 1.0,
    }
}

/// Settings for the numeric measurements.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeasureConfig {
    pub quadrature: QuadratureConfig,
    pub decay_s: Vec<f64>,
    pub decay_horizon: f64,
    pub decay_threshold: f64,
    /// Base times at which `S` must be finite.
    pub s_probes: Vec<f64>,
}

impl Default for MeasureConfig {
    fn default() -> Self {
        MeasureConfig {
            quadrature: QuadratureConfig { cross_check: false, ..QuadratureConfig::default() },
            decay_s: vec![0.0, 1.0, 5.0, 10.0],
            decay_horizon: 1e12,
            decay_threshold: 1e-2,
            s_probes: vec![0.0, 1.0, 5.0],
        }
    }
}

/// Hides closed forms from the admissibility routines.
fn generic_bounds(bounds: &BoundFamily) -> BoundFamily {
    match bounds.as_product_form() {
        Some(pf) => BoundFamily::ProductForm { frak_a: pf.frak_a, frak_b: pf.frak_b, frak_c: pf.frak_c, frak_d: pf.frak_d },
        None => bounds.clone(),
    }
}

fn finite(r: Result<crate::admissibility::Estimate>) -> Result<bool> {
    match r {
        Ok(e) => Ok(e.value.is_finite()),
        Err(Error::Divergence { .. }) => Ok(false),
        Err(e) => Err(e),
    }
}

pub fn measure(m: &Measure, bounds: &BoundFamily, model: &Model, cfg: &MeasureConfig) -> Result<bool> {
    let gb = generic_bounds(bounds);
    match m {
        Measure::Decay => {
            let r = check_decay_condition(bounds, &cfg.decay_s, cfg.decay_horizon, cfg.decay_threshold);
            Ok(r.numeric == Verdict::Pass)
        }
        Measure::AlphaFinite => finite(compute_alpha(&gb, &model.envelope(), &cfg.quadrature)),
        Measure::BetaFinite => finite(compute_beta(&gb, &model.envelope(), &cfg.quadrature)),
        Measure::SFinite => {
            let Model::Local { radius, .. } = model else {
                return Ok(true);
            };
            for &s in &cfg.s_probes {
                match s_sup_numeric(bounds, radius, s, &cfg.quadrature) {
                    Ok(Some(_)) => {}
                    Ok(None) | Err(Error::Divergence { .. }) => return Ok(false),
                    Err(e) => return Err(e),
                }
            }
            Ok(true)
        }
        Measure::All(ms) => {
            for m in ms {
                if !measure(m, bounds, model, cfg)? {
                    return Ok(false);
                }
            }
            Ok(true)
        }
        Measure::WithRadius(inner, r) => measure(inner, bounds, &model.with_radius(r), cfg),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceRow {
    pub family: String,
    pub point: String,
    pub condition: String,
    pub lhs: f64,
    pub op: Op,
    pub rhs: f64,
    pub stated: bool,
    pub measured: bool,
    pub implication: bool,
    pub agree: bool,
}

impl EquivalenceRow {
    /// `a+ε<b: −0.9 < 0 PASS`, using the measured verdict.
    pub fn line(&self) -> String {
        let verdict = if self.measured { "PASS" } else { "FAIL" };
        let mut s = format!("{}: {} {} {} {}", self.condition, num(self.lhs), self.op.symbol(), num(self.rhs), verdict);
        if !self.agree {
            s.push_str(" (MISMATCH)");
        }
        s
    }
}

/// Compact decimal with a Unicode minus sign.
pub fn num(x: f64) -> String {
    if x.is_infinite() {
        return if x > 0.0 { "∞".into() } else { "−∞".into() };
    }
    let r = (x * 1e9).round() / 1e9;
    let mut s = format!("{}", if r == 0.0 { 0.0 } else { r });
    if s.len() > 12 {
        s = format!("{r:.6e}");
    }
    s.replace('-', "−")
}

/// Evaluates every stated condition of one parameter point.
pub fn evaluate(family: &str, point: &str, bounds: &BoundFamily, model: &Model, cfg: &MeasureConfig) -> Result<Vec<EquivalenceRow>> {
    stated_conditions(bounds, model)
        .into_iter()
        .map(|c| {
            let measured = measure(&c.measure, bounds, model, cfg)?;
            let stated = c.stated();
            let agree = if c.implication { !stated || measured } else { stated == measured };
            Ok(EquivalenceRow {
                family: family.into(),
                point: point.into(),
                condition: c.label,
                lhs: c.lhs,
                op: c.op,
                rhs: c.rhs,
                stated,
                measured,
                implication: c.implication,
                agree,
            })
        })
        .collect()
}

/// One family and its sweep points.
#[derive(Clone, Debug)]
pub struct SweepPoint {
    pub family: &'static str,
    pub label: String,
    pub bounds: BoundFamily,
    pub model: Model,
}

const RHO: Rho = Rho::Power { k: 1.0, p: 1.5 };
const MU: Growth = Growth::Power { p: 2.0 };
const NU: Growth = Growth::Power { p: 1.0 };

/// Five parameter points per family, straddling each stated threshold with ties included.
pub fn sweep_points() -> Vec<SweepPoint> {
    let mut pts = Vec::new();
    let (d, a, b) = (1.0, -1.0, 0.0);
    let exp_lip = LipschitzEnvelope::ExpDecay { delta: 0.01, rate: 0.2 };
    let poly_lip = LipschitzEnvelope::PolyDecay { delta: 0.01, p: 1.2 };
    for eps in [0.1, 0.6, 1.0, 1.1, 1.6] {
        let label = format!("a={a}, b={b}, ε={eps}");
        pts.push(SweepPoint {
            family: "exponential",
            label: label.clone(),
            bounds: BoundFamily::Exponential { d, a, b, eps },
            model: Model::Global(exp_lip.clone()),
        });
        pts.push(SweepPoint {
            family: "polynomial",
            label: label.clone(),
            bounds: BoundFamily::Polynomial { d, a, b, eps },
            model: Model::Global(poly_lip.clone()),
        });
        pts.push(SweepPoint {
            family: "rho",
            label: label.clone(),
            bounds: BoundFamily::Rho { d, a, b, eps, rho: RHO },
            model: Model::Global(LipschitzEnvelope::RhoDecay { delta: 0.01, eps, rho: RHO }),
        });
        pts.push(SweepPoint {
            family: "mixed",
            label,
            bounds: BoundFamily::MixedPolyShift { d, a, b, eps },
            model: Model::Global(poly_lip.clone()),
        });
    }
    for eps in [0.1, 1.0, 2.0, 2.5, 3.0] {
        pts.push(SweepPoint {
            family: "mu_nu",
            label: format!("a={a}, b={b}, ε={eps}, μ=(1+t)^2, ν=1+t"),
            bounds: BoundFamily::MuNu { d, a, b, eps, mu: MU, nu: NU },
            model: Model::Global(LipschitzEnvelope::PolyDecay { delta: 0.1, p: 2.1 }),
        });
    }
    for a in [-2.0, -1.0, -0.5, -0.1, -0.01] {
        pts.push(SweepPoint {
            family: "exp_poly_b",
            label: format!("a={a}, b=0.5, ε=0.1"),
            bounds: BoundFamily::ExpPolyB { d, a, b: 0.5, eps: 0.1 },
            model: Model::Global(LipschitzEnvelope::ExpDecay { delta: 0.01, rate: 0.2 }),
        });
    }
    let (c, q, eps) = (1.0, 2.0, 0.1);
    for beta in [0.05, 0.075, 0.1, 1.0, 1.2] {
        pts.push(SweepPoint {
            family: "local_exp",
            label: format!("a={a}, ε={eps}, q={q}, β={beta}"),
            bounds: BoundFamily::Exponential { d, a, b, eps },
            model: Model::Local { c, q, radius: RadiusFunction::Exp { delta: 0.1, beta } },
        });
    }
    for beta in [0.55, 0.58, 0.6, 1.0, 1.2] {
        pts.push(SweepPoint {
            family: "local_poly",
            label: format!("a={a}, ε={eps}, q={q}, β={beta}"),
            bounds: BoundFamily::Polynomial { d, a, b, eps },
            model: Model::Local { c, q, radius: RadiusFunction::Poly { delta: 0.1, beta } },
        });
    }
    for a in [-2.0, -0.6, -0.59, -0.3, -0.15] {
        pts.push(SweepPoint {
            family: "local_poly_interval",
            label: format!("a={a}, ε={eps}, q={q}, β=0.6"),
            bounds: BoundFamily::Polynomial { d, a, b, eps },
            model: Model::Local { c, q, radius: RadiusFunction::Poly { delta: 0.1, beta: 0.6 } },
        });
    }
    for beta in [0.05, 0.075, 0.1, 0.5, 1.2] {
        pts.push(SweepPoint {
            family: "local_rho",
            label: format!("a={a}, ε={eps}, q={q}, β={beta}, ρ=(1+t)^1.5−1"),
            bounds: BoundFamily::Rho { d, a, b, eps, rho: RHO },
            model: Model::Local { c, q, radius: RadiusFunction::RhoForm { delta: 0.1, beta, q, rho: RHO } },
        });
    }
    for beta in [0.3, 0.6, 0.8, 1.0, 1.2] {
        pts.push(SweepPoint {
            family: "local_mixed",
            label: format!("a={a}, ε={eps}, q={q}, β={beta}"),
            bounds: BoundFamily::MixedPolyShift { d, a, b, eps },
            model: Model::Local { c, q, radius: RadiusFunction::Poly { delta: 0.1, beta } },
        });
    }
    for a in [-1.0, -0.5, -0.3, -0.275, -0.2] {
        pts.push(SweepPoint {
            family: "local_mu_nu",
            label: format!("a={a}, ε={eps}, q={q}, R=0.1 μ^a"),
            bounds: BoundFamily::MuNu { d, a, b, eps, mu: MU, nu: NU },
            model: Model::Local { c, q, radius: RadiusFunction::MuPower { delta: 0.1, a, mu: MU } },
        });
    }
    pts
}

/// Runs the full sweep.
pub fn equivalence_sweep(cfg: &MeasureConfig) -> Result<Vec<EquivalenceRow>> {
    let mut rows = Vec::new();
    for p in sweep_points() {
        let mut r = evaluate(p.family, &p.label, &p.bounds, &p.model, cfg)?;
        if p.family == "local_poly_interval" {
            r.retain(|row| row.condition.starts_with("(2ε+1)/q"));
        }
        rows.extend(r);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn num_uses_unicode_minus() {
        assert_eq!(num(-1.0 + 0.1), "−0.9");
        assert_eq!(num(0.0), "0");
        assert_eq!(num(-0.0), "0");
        assert_eq!(num(f64::INFINITY), "∞");
    }

    #[test]
    fn exponential_row_text() {
        let rows = evaluate(
            "exponential",
            "",
            &BoundFamily::Exponential { d: 1.0, a: -1.0, b: 0.0, eps: 0.1 },
            &Model::Global(LipschitzEnvelope::ExpDecay { delta: 0.01, rate: 0.2 }),
            &MeasureConfig::default(),
        )
        .unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].line(), "a+ε<b: −0.9 < 0 PASS");
    }

    #[test]
    fn local_exp_ties() {
        let cfg = MeasureConfig::default();
        let bounds = BoundFamily::Exponential { d: 1.0, a: -1.0, b: 0.0, eps: 0.1 };
        // β = ε/q: α tie diverges; β = 2ε/q: the β tie stays finite; β = −a: S tie stays finite
        for (beta, expect) in [(0.05, [false, false, true]), (0.1, [true, true, true]), (1.0, [true, true, true])] {
            let m = Model::Local { c: 1.0, q: 2.0, radius: RadiusFunction::Exp { delta: 0.1, beta } };
            let rows = evaluate("local_exp", "", &bounds, &m, &cfg).unwrap();
            let got: Vec<bool> = rows[1..].iter().map(|r| r.measured).collect();
            assert_eq!(got, expect, "β = {beta}");
            assert!(rows.iter().all(|r| r.agree));
        }
    }
}
