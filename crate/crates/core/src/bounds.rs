//! Dichotomy bound families `a(t,s)`, `b(t,s)`, their evaluation and empirical validation.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functions::{Growth, Profile, Rho, ScalarFn};
use crate::linear_system::LinearSystem;

/// Four scalar functions with `a = (𝔞(s)/𝔞(t)) 𝔠(s)` and `b = (𝔟(s)/𝔟(t)) 𝔡(t)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProductForm {
    pub frak_a: ScalarFn,
    pub frak_b: ScalarFn,
    pub frak_c: ScalarFn,
    pub frak_d: ScalarFn,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundFamily {
    ProductForm { frak_a: ScalarFn, frak_b: ScalarFn, frak_c: ScalarFn, frak_d: ScalarFn },
    /// `a = D e^{a(t-s)+εs}`, `b = D e^{-b(t-s)+εt}`
    Exponential { d: f64, a: f64, b: f64, eps: f64 },
    /// `a = D ((t+1)/(s+1))^a (s+1)^ε`, `b = D ((t+1)/(s+1))^{-b} (t+1)^ε`
    Polynomial { d: f64, a: f64, b: f64, eps: f64 },
    /// Exponential family in the time variable `ρ(t)`.
    Rho { d: f64, a: f64, b: f64, eps: f64, rho: Rho },
    /// `a = D (μ(t)/μ(s))^a ν(s)^ε`, `b = D (μ(t)/μ(s))^{-b} ν(t)^ε`
    MuNu { d: f64, a: f64, b: f64, eps: f64, mu: Growth, nu: Growth },
    /// `a = D (t-s+1)^a (s+1)^ε`, `b = D (t-s+1)^{-b} (t+1)^ε`
    MixedPolyShift { d: f64, a: f64, b: f64, eps: f64 },
    /// Exponential `a`, polynomial `b`.
    ExpPolyB { d: f64, a: f64, b: f64, eps: f64 },
    /// `a = L`, `b = D e^{a(t-s)+εt}`
    ConstantA {
        l: f64,
        a: f64,
        eps: f64,
        #[serde(default = "one")]
        d: f64,
    },
    Tabulated(TabulatedBounds),
}

impl BoundFamily {
    pub fn name(&self) -> &'static str {
        match self {
            BoundFamily::ProductForm { .. } => "product_form",
            BoundFamily::Exponential { .. } => "exponential",
            BoundFamily::Polynomial { .. } => "polynomial",
            BoundFamily::Rho { .. } => "rho",
            BoundFamily::MuNu { .. } => "mu_nu",
            BoundFamily::MixedPolyShift { .. } => "mixed_poly_shift",
            BoundFamily::ExpPolyB { .. } => "exp_polyb",
            BoundFamily::ConstantA { .. } => "constant_a",
            BoundFamily::Tabulated(_) => "tabulated",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Constraint(format!("{}: {m}", self.name())));
        let check_dab = |d: f64, a: f64, b: f64| -> std::result::Result<(), String> {
            if !(d >= 1.0) {
                return Err(format!("D = {d} must be at least 1"));
            }
            if !(a < 0.0 && 0.0 <= b) {
                return Err(format!("need a < 0 <= b, got a = {a}, b = {b}"));
            }
            Ok(())
        };
        let r = match self {
            BoundFamily::ProductForm { frak_a, frak_b, frak_c, frak_d } => {
                if [frak_a, frak_b, frak_c, frak_d].iter().all(|f| f.scale > 0.0) {
                    Ok(())
                } else {
                    Err("scalar functions must be positive".to_string())
                }
            }
            BoundFamily::Exponential { d, a, b, eps } => check_dab(*d, *a, *b).and(nonneg(*eps)),
            BoundFamily::Rho { d, a, b, eps, rho } => check_dab(*d, *a, *b).and(nonneg(*eps)).and(rho.validate()),
            BoundFamily::Polynomial { d, a, b, eps }
            | BoundFamily::MixedPolyShift { d, a, b, eps }
            | BoundFamily::ExpPolyB { d, a, b, eps } => check_dab(*d, *a, *b).and(positive(*eps)),
            BoundFamily::MuNu { d, a, b, eps, mu, nu } => {
                check_dab(*d, *a, *b).and(positive(*eps)).and(mu.validate()).and(nu.validate())
            }
            BoundFamily::ConstantA { l, a, eps, d } => {
                if !(*l >= 1.0 && *a < 0.0 && *d > 0.0) {
                    Err(format!("need L >= 1, a < 0, D > 0; got L = {l}, a = {a}, D = {d}"))
                } else {
                    positive(*eps)
                }
            }
            BoundFamily::Tabulated(tab) => tab.validate(),
        };
        r.or_else(bad)
    }

    /// `ln a(t,s)`; callers guarantee `t >= s >= 0`.
    pub fn ln_a(&self, t: f64, s: f64) -> f64 {
        match self {
            BoundFamily::ProductForm { frak_a, frak_c, .. } => frak_a.ln_value(s) - frak_a.ln_value(t) + frak_c.ln_value(s),
            BoundFamily::Exponential { d, a, eps, .. } => d.ln() + a * (t - s) + eps * s,
            BoundFamily::Polynomial { d, a, eps, .. } => d.ln() + a * (t.ln_1p() - s.ln_1p()) + eps * s.ln_1p(),
            BoundFamily::Rho { d, a, eps, rho, .. } => {
                let (rt, rs) = (rho.value(t), rho.value(s));
                d.ln() + a * (rt - rs) + eps * rs
            }
            BoundFamily::MuNu { d, a, eps, mu, nu, .. } => {
                d.ln() + a * (mu.ln_value(t) - mu.ln_value(s)) + eps * nu.ln_value(s)
            }
            BoundFamily::MixedPolyShift { d, a, eps, .. } => d.ln() + a * (t - s).ln_1p() + eps * s.ln_1p(),
            BoundFamily::ExpPolyB { d, a, eps, .. } => d.ln() + a * (t - s) + eps * s,
            BoundFamily::ConstantA { l, .. } => l.ln(),
            BoundFamily::Tabulated(tab) => tab.ln_a(t, s),
        }
    }

    /// `ln b(t,s)`; callers guarantee `t >= s >= 0`.
    pub fn ln_b(&self, t: f64, s: f64) -> f64 {
        match self {
            BoundFamily::ProductForm { frak_b, frak_d, .. } => frak_b.ln_value(s) - frak_b.ln_value(t) + frak_d.ln_value(t),
            BoundFamily::Exponential { d, b, eps, .. } => d.ln() - b * (t - s) + eps * t,
            BoundFamily::Polynomial { d, b, eps, .. } => d.ln() - b * (t.ln_1p() - s.ln_1p()) + eps * t.ln_1p(),
            BoundFamily::Rho { d, b, eps, rho, .. } => {
                let (rt, rs) = (rho.value(t), rho.value(s));
                d.ln() - b * (rt - rs) + eps * rt
            }
            BoundFamily::MuNu { d, b, eps, mu, nu, .. } => {
                d.ln() - b * (mu.ln_value(t) - mu.ln_value(s)) + eps * nu.ln_value(t)
            }
            BoundFamily::MixedPolyShift { d, b, eps, .. } => d.ln() - b * (t - s).ln_1p() + eps * t.ln_1p(),
            BoundFamily::ExpPolyB { d, b, eps, .. } => d.ln() - b * (t.ln_1p() - s.ln_1p()) + eps * t.ln_1p(),
            BoundFamily::ConstantA { a, eps, d, .. } => d.ln() + a * (t - s) + eps * t,
            BoundFamily::Tabulated(tab) => tab.ln_b(t, s),
        }
    }

    pub fn eval_a(&self, t: f64, s: f64) -> Result<f64> {
        check_order(t, s)?;
        if let BoundFamily::Tabulated(tab) = self {
            if let Some((a, _)) = tab.node_value(t, s) {
                return Ok(a);
            }
        }
        Ok(self.ln_a(t, s).exp())
    }

    pub fn eval_b(&self, t: f64, s: f64) -> Result<f64> {
        check_order(t, s)?;
        if let BoundFamily::Tabulated(tab) = self {
            if let Some((_, b)) = tab.node_value(t, s) {
                return Ok(b);
            }
        }
        Ok(self.ln_b(t, s).exp())
    }

    /// Product-form representation, when the family has one.
    pub fn as_product_form(&self) -> Option<ProductForm> {
        let pf = |frak_a, frak_b, frak_c, frak_d| Some(ProductForm { frak_a, frak_b, frak_c, frak_d });
        match *self {
            BoundFamily::ProductForm { frak_a, frak_b, frak_c, frak_d } => pf(frak_a, frak_b, frak_c, frak_d),
            BoundFamily::Exponential { d, a, b, eps } => {
                pf(ScalarFn::exp(1.0, -a), ScalarFn::exp(1.0, b), ScalarFn::exp(d, eps), ScalarFn::exp(d, eps))
            }
            BoundFamily::Polynomial { d, a, b, eps } => {
                pf(ScalarFn::power(1.0, -a), ScalarFn::power(1.0, b), ScalarFn::power(d, eps), ScalarFn::power(d, eps))
            }
            BoundFamily::Rho { d, a, b, eps, rho } => pf(
                ScalarFn::exp_rho(1.0, -a, rho),
                ScalarFn::exp_rho(1.0, b, rho),
                ScalarFn::exp_rho(d, eps, rho),
                ScalarFn::exp_rho(d, eps, rho),
            ),
            BoundFamily::MuNu { d, a, b, eps, mu, nu } => pf(
                ScalarFn::growth_power(1.0, -a, mu),
                ScalarFn::growth_power(1.0, b, mu),
                ScalarFn::growth_power(d, eps, nu),
                ScalarFn::growth_power(d, eps, nu),
            ),
            BoundFamily::ExpPolyB { d, a, b, eps } => {
                pf(ScalarFn::exp(1.0, -a), ScalarFn::power(1.0, b), ScalarFn::exp(d, eps), ScalarFn::power(d, eps))
            }
            BoundFamily::ConstantA { l, a, eps, d } => {
                pf(ScalarFn::constant(1.0), ScalarFn::exp(1.0, -a), ScalarFn::constant(l), ScalarFn::exp(d, eps))
            }
            BoundFamily::MixedPolyShift { .. } | BoundFamily::Tabulated(_) => None,
        }
    }

    /// Closed-form verdict on `a(t,s) b(t,s) -> 0`, where the family admits one.
    pub fn decay_closed_form(&self) -> Option<bool> {
        match self {
            BoundFamily::Exponential { a, b, eps, .. }
            | BoundFamily::Polynomial { a, b, eps, .. }
            | BoundFamily::Rho { a, b, eps, .. }
            | BoundFamily::MixedPolyShift { a, b, eps, .. } => Some(a + eps < *b),
            BoundFamily::ExpPolyB { a, .. } => Some(*a < 0.0),
            BoundFamily::ConstantA { a, eps, .. } => Some(a + eps < 0.0),
            BoundFamily::MuNu { a, b, eps, mu, nu, .. } => {
                // exponent of μ^{a-b} ν^ε at infinity
                let mu_exp = a - b;
                match (mu, nu) {
                    (Growth::Exp { rate: m }, Growth::Exp { rate: n }) => Some(m * mu_exp + n * eps < 0.0),
                    (Growth::Power { p: m }, Growth::Power { p: n }) => Some(m * mu_exp + n * eps < 0.0),
                    (Growth::Exp { .. }, Growth::Power { .. }) => Some(mu_exp < 0.0),
                    (Growth::Power { .. }, Growth::Exp { .. }) => Some(*eps == 0.0 && mu_exp < 0.0),
                }
            }
            BoundFamily::ProductForm { frak_a, frak_b, frak_d, .. } => {
                // ln(𝔡/(𝔞𝔟)) = const + Σ rate_i h_i(t); decidable when all profiles coincide
                let fs = [frak_a, frak_b, frak_d];
                let varying: Vec<&&ScalarFn> = fs.iter().filter(|f| !f.is_constant()).collect();
                if varying.is_empty() {
                    return Some(false);
                }
                let profile: Profile = varying[0].profile;
                if varying.iter().any(|f| f.profile != profile) {
                    return None;
                }
                let rate = frak_d.rate - frak_a.rate - frak_b.rate;
                Some(rate < 0.0)
            }
            BoundFamily::Tabulated(_) => None,
        }
    }
}

fn nonneg(x: f64) -> std::result::Result<(), String> {
    if x >= 0.0 {
        Ok(())
    } else {
        Err(format!("ε = {x} must be nonnegative"))
    }
}

fn positive(x: f64) -> std::result::Result<(), String> {
    if x > 0.0 {
        Ok(())
    } else {
        Err(format!("ε = {x} must be positive"))
    }
}

fn check_order(t: f64, s: f64) -> Result<()> {
    if !(t >= s && s >= 0.0) {
        return Err(Error::Domain(format!("need t >= s >= 0, got t = {t}, s = {s}")));
    }
    Ok(())
}

/// Bounds sampled on a rectangular grid in `(s, t-s)`, interpolated log-linearly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TabulatedBounds {
    pub s_nodes: Vec<f64>,
    pub lag_nodes: Vec<f64>,
    /// Row-major in `(s, lag)`.
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

fn merge_key(values: &mut Vec<f64>) {
    values.sort_by(|x, y| x.partial_cmp(y).expect("finite grid"));
    values.dedup_by(|x, y| (*x - *y).abs() <= 1e-9 * (1.0 + y.abs()));
}

fn locate(nodes: &[f64], x: f64) -> Option<usize> {
    nodes.iter().position(|&n| (n - x).abs() <= 1e-9 * (1.0 + n.abs()))
}

fn cell(nodes: &[f64], x: f64) -> (usize, f64) {
    if nodes.len() == 1 {
        return (0, 0.0);
    }
    let i = match nodes.partition_point(|&n| n <= x) {
        0 => 0,
        k => (k - 1).min(nodes.len() - 2),
    };
    (i, (x - nodes[i]) / (nodes[i + 1] - nodes[i]))
}

impl TabulatedBounds {
    pub fn from_rows(rows: &[(f64, f64, f64, f64)]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Config("tabulated bounds need at least one row".into()));
        }
        let mut s_nodes: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let mut lag_nodes: Vec<f64> = rows.iter().map(|r| r.0 - r.1).collect();
        merge_key(&mut s_nodes);
        merge_key(&mut lag_nodes);
        let (ns, nl) = (s_nodes.len(), lag_nodes.len());
        let mut a = vec![f64::NAN; ns * nl];
        let mut b = vec![f64::NAN; ns * nl];
        for &(t, s, av, bv) in rows {
            let i = locate(&s_nodes, s).expect("merged node");
            let j = locate(&lag_nodes, t - s).expect("merged node");
            a[i * nl + j] = av;
            b[i * nl + j] = bv;
        }
        if a.iter().chain(b.iter()).any(|v| v.is_nan()) {
            return Err(Error::Config("tabulated bounds must cover a full grid in (s, t-s)".into()));
        }
        let tab = TabulatedBounds { s_nodes, lag_nodes, a, b };
        tab.validate().map_err(Error::Config)?;
        Ok(tab)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let headers = rdr.headers().map_err(|e| Error::Io(e.to_string()))?.clone();
        let names: Vec<&str> = headers.iter().map(str::trim).collect();
        if names != ["t", "s", "a", "b"] {
            return Err(Error::Config(format!("{}: header must be t,s,a,b, got {}", path.display(), names.join(","))));
        }
        let mut rows = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Io(e.to_string()))?;
            let parse = |k: usize| -> Result<f64> {
                rec.get(k).unwrap_or("").trim().parse::<f64>().map_err(|e| {
                    Error::Config(format!("{}: line {}, field {}: {e}", path.display(), line + 2, names[k]))
                })
            };
            rows.push((parse(0)?, parse(1)?, parse(2)?, parse(3)?));
        }
        Self::from_rows(&rows)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("t,s,a,b\n");
        let nl = self.lag_nodes.len();
        for (i, &s) in self.s_nodes.iter().enumerate() {
            for (j, &u) in self.lag_nodes.iter().enumerate() {
                let k = i * nl + j;
                out.push_str(&format!("{:e},{:e},{:e},{:e}\n", s + u, s, self.a[k], self.b[k]));
            }
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    /// Samples a family on the grid `s_nodes × lag_nodes`.
    pub fn sample(family: &BoundFamily, s_nodes: &[f64], lag_nodes: &[f64]) -> Result<Self> {
        let mut rows = Vec::new();
        for &s in s_nodes {
            for &u in lag_nodes {
                rows.push((s + u, s, family.eval_a(s + u, s)?, family.eval_b(s + u, s)?));
            }
        }
        Self::from_rows(&rows)
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.lag_nodes.first().copied() != Some(0.0) {
            return Err("tabulated bounds must include the diagonal t = s".into());
        }
        if self.s_nodes.first().copied() != Some(0.0) {
            return Err("tabulated bounds must include s = 0".into());
        }
        if self.a.iter().chain(self.b.iter()).any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err("tabulated bound values must be positive and finite".into());
        }
        Ok(())
    }

    fn node_value(&self, t: f64, s: f64) -> Option<(f64, f64)> {
        let i = self.s_nodes.iter().position(|&n| n == s)?;
        let j = self.lag_nodes.iter().position(|&n| n == t - s)?;
        let k = i * self.lag_nodes.len() + j;
        Some((self.a[k], self.b[k]))
    }

    fn interp_ln(&self, values: &[f64], t: f64, s: f64) -> f64 {
        let nl = self.lag_nodes.len();
        let (i, ws) = cell(&self.s_nodes, s);
        let (j, wu) = cell(&self.lag_nodes, t - s);
        let v = |ii: usize, jj: usize| {
            let ii = ii.min(self.s_nodes.len() - 1);
            let jj = jj.min(nl - 1);
            values[ii * nl + jj].ln()
        };
        let low = v(i, j) * (1.0 - wu) + v(i, j + 1) * wu;
        if self.s_nodes.len() == 1 {
            return low;
        }
        let high = v(i + 1, j) * (1.0 - wu) + v(i + 1, j + 1) * wu;
        low * (1.0 - ws) + high * ws
    }

    fn ln_a(&self, t: f64, s: f64) -> f64 {
        self.interp_ln(&self.a, t, s)
    }

    fn ln_b(&self, t: f64, s: f64) -> f64 {
        self.interp_ln(&self.b, t, s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

impl Verdict {
    pub fn from_bool(b: bool) -> Self {
        if b {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::Inconclusive => "INCONCLUSIVE",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecaySample {
    pub s: f64,
    pub final_t: f64,
    pub final_product: f64,
    pub tail_decreasing: bool,
    pub verdict: Verdict,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub closed_form: Option<bool>,
    pub numeric: Verdict,
    pub verdict: Verdict,
    pub samples: Vec<DecaySample>,
}

const DECAY_START_LAG: f64 = 1e-3;
const DECAY_TAIL_SAMPLES: usize = 10;

/// Samples `a(t,s) b(t,s)` on `t = s + Δ 2^k` up to the horizon.
pub fn check_decay_condition(bounds: &BoundFamily, s_samples: &[f64], horizon: f64, threshold: f64) -> DecayReport {
    let mut samples = Vec::new();
    for &s in s_samples {
        let mut ln_values = Vec::new();
        let mut lag = DECAY_START_LAG;
        let mut last_t = s;
        while s + lag <= horizon {
            let t = s + lag;
            ln_values.push(bounds.ln_a(t, s) + bounds.ln_b(t, s));
            last_t = t;
            lag *= 2.0;
        }
        let tail = &ln_values[ln_values.len().saturating_sub(DECAY_TAIL_SAMPLES)..];
        let decreasing = tail.len() >= 2 && tail.windows(2).all(|w| w[1] < w[0] - 1e-12 * w[0].abs().max(1.0));
        let last = ln_values.last().copied().unwrap_or(f64::INFINITY);
        let verdict = if !decreasing || last.is_nan() {
            Verdict::Fail
        } else if last <= threshold.ln() {
            Verdict::Pass
        } else {
            Verdict::Inconclusive
        };
        samples.push(DecaySample { s, final_t: last_t, final_product: last.exp(), tail_decreasing: decreasing, verdict });
    }
    let numeric = if samples.iter().any(|x| x.verdict == Verdict::Fail) {
        Verdict::Fail
    } else if samples.iter().any(|x| x.verdict == Verdict::Inconclusive) {
        Verdict::Inconclusive
    } else {
        Verdict::Pass
    };
    let closed_form = bounds.decay_closed_form();
    let verdict = closed_form.map(Verdict::from_bool).unwrap_or(numeric);
    DecayReport { closed_form, numeric, verdict, samples }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundViolation {
    pub t: f64,
    pub s: f64,
    pub which: char,
    pub measured: f64,
    pub bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DichotomyReport {
    pub checked: usize,
    pub slack: f64,
    pub worst_ratio_a: f64,
    pub worst_ratio_b: f64,
    pub violations: Vec<BoundViolation>,
}

impl DichotomyReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 1 && m.ncols() == 1 {
        return m[(0, 0)].abs();
    }
    m.singular_values().max()
}

/// Compares `‖T_{t,s}P‖` and `‖(T_{t,s}|_F)^{-1}Q‖` against the bounds on a grid.
pub fn verify_dichotomy_bounds(
    system: &LinearSystem,
    bounds: &BoundFamily,
    grid: &[(f64, f64)],
    slack: f64,
) -> Result<DichotomyReport> {
    let mut report = DichotomyReport { checked: 0, slack, worst_ratio_a: 0.0, worst_ratio_b: 0.0, violations: vec![] };
    for &(t, s) in grid {
        check_order(t, s)?;
        let (u, _) = system.restricted(t, s)?;
        let vinv = system.inverse_f_block(t, s)?;
        let (na, nb) = (spectral_norm(&u), spectral_norm(&vinv));
        let (ba, bb) = (bounds.eval_a(t, s)?, bounds.eval_b(t, s)?);
        report.worst_ratio_a = report.worst_ratio_a.max(na / ba);
        report.worst_ratio_b = report.worst_ratio_b.max(nb / bb);
        if na > (1.0 + slack) * ba {
            report.violations.push(BoundViolation { t, s, which: 'a', measured: na, bound: ba });
        }
        if nb > (1.0 + slack) * bb {
            report.violations.push(BoundViolation { t, s, which: 'b', measured: nb, bound: bb });
        }
        report.checked += 1;
    }
    Ok(report)
}

/// Sharpness pairs `(2kπ, (2k-1)π)` followed by a spread of generic pairs.
pub fn default_dichotomy_grid(k_max: usize) -> Vec<(f64, f64)> {
    use std::f64::consts::PI;
    let mut grid: Vec<(f64, f64)> = (1..=k_max).map(|k| (2.0 * k as f64 * PI, (2.0 * k as f64 - 1.0) * PI)).collect();
    for &s in &[0.0, 0.5, 1.7, 4.0, 9.3] {
        for &lag in &[0.0, 0.3, 1.0, 2.5, 6.0, 11.0] {
            grid.push((s + lag, s));
        }
    }
    grid
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exp_family() -> BoundFamily {
        BoundFamily::Exponential { d: 1.0, a: -1.0, b: 0.0, eps: 0.1 }
    }

    #[test]
    fn exponential_values() {
        let f = exp_family();
        assert_eq!(f.eval_a(0.0, 0.0).unwrap(), 1.0);
        assert!((f.eval_a(3.0, 3.0).unwrap() - 0.3f64.exp()).abs() < 1e-15);
        assert!((f.eval_a(2.0, 1.0).unwrap() - 0.4065697).abs() < 1e-7);
        assert!((f.eval_b(2.0, 1.0).unwrap() - 1.2214028).abs() < 1e-7);
        assert_eq!(f.eval_b(0.0, 0.0).unwrap(), 1.0);
    }

    #[test]
    fn polynomial_value() {
        let f = BoundFamily::Polynomial { d: 2.0, a: -1.0, b: 0.0, eps: 0.5 };
        assert!((f.eval_a(3.0, 1.0).unwrap() - 2f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn constant_a_is_constant() {
        let f = BoundFamily::ConstantA { l: 3.0, a: -1.0, eps: 0.1, d: 1.0 };
        for (t, s) in [(0.0, 0.0), (5.0, 1.0), (100.0, 3.0)] {
            assert!((f.eval_a(t, s).unwrap() - 3.0).abs() < 1e-14);
        }
    }

    #[test]
    fn domain_error_for_reversed_times() {
        assert!(matches!(exp_family().eval_a(1.0, 2.0), Err(Error::Domain(_))));
    }

    #[test]
    fn decay_verdicts() {
        let pass = check_decay_condition(&exp_family(), &[0.0, 1.0], 1e3, 1e-6);
        assert_eq!(pass.closed_form, Some(true));
        assert_eq!(pass.numeric, Verdict::Pass);
        let fail_family = BoundFamily::Exponential { d: 1.0, a: -0.1, b: 0.0, eps: 0.5 };
        let fail = check_decay_condition(&fail_family, &[0.0, 1.0], 1e3, 1e-6);
        assert_eq!(fail.verdict, Verdict::Fail);
        assert_eq!(fail.numeric, Verdict::Fail);
    }

    #[test]
    fn flat_product_fails() {
        let ones = BoundFamily::ProductForm {
            frak_a: ScalarFn::constant(1.0),
            frak_b: ScalarFn::constant(1.0),
            frak_c: ScalarFn::constant(1.0),
            frak_d: ScalarFn::constant(1.0),
        };
        let r = check_decay_condition(&ones, &[0.0, 2.0], 1e4, 1e-3);
        assert_eq!(r.verdict, Verdict::Fail);
        assert_eq!(r.numeric, Verdict::Fail);
    }

    #[test]
    fn product_forms_reproduce_families() {
        let families = [
            exp_family(),
            BoundFamily::Polynomial { d: 1.5, a: -1.0, b: 0.5, eps: 0.3 },
            BoundFamily::Rho { d: 1.0, a: -1.0, b: 0.2, eps: 0.1, rho: Rho::Power { k: 1.0, p: 1.25 } },
            BoundFamily::MuNu {
                d: 2.0,
                a: -1.0,
                b: 0.0,
                eps: 0.1,
                mu: Growth::Exp { rate: 1.0 },
                nu: Growth::Power { p: 1.0 },
            },
            BoundFamily::ExpPolyB { d: 1.0, a: -0.5, b: 1.0, eps: 0.2 },
            BoundFamily::ConstantA { l: 1.2, a: -0.3, eps: 0.1, d: 1.0 },
        ];
        for fam in families {
            let pf = fam.as_product_form().unwrap();
            let prod = BoundFamily::ProductForm { frak_a: pf.frak_a, frak_b: pf.frak_b, frak_c: pf.frak_c, frak_d: pf.frak_d };
            for (t, s) in [(0.0, 0.0), (1.0, 0.5), (7.5, 2.0), (40.0, 11.0)] {
                let (x, y) = (fam.eval_a(t, s).unwrap(), prod.eval_a(t, s).unwrap());
                assert!((x - y).abs() <= 1e-12 * x, "{fam:?} a at ({t},{s}): {x} vs {y}");
                let (x, y) = (fam.eval_b(t, s).unwrap(), prod.eval_b(t, s).unwrap());
                assert!((x - y).abs() <= 1e-12 * x, "{fam:?} b at ({t},{s}): {x} vs {y}");
            }
        }
    }

    #[test]
    fn tabulated_is_exact_for_exponential_on_aligned_grid() {
        let tab = TabulatedBounds::sample(&exp_family(), &[0.0, 1.0, 2.0, 4.0], &[0.0, 0.5, 1.0, 3.0]).unwrap();
        let fam = BoundFamily::Tabulated(tab);
        for (t, s) in [(1.3, 0.2), (3.7, 1.5), (6.0, 3.0)] {
            let exact = exp_family().eval_a(t, s).unwrap();
            assert!((fam.eval_a(t, s).unwrap() - exact).abs() < 1e-12 * exact);
        }
    }

    #[test]
    fn tabulated_round_trip_through_csv() {
        let tab = TabulatedBounds::sample(&exp_family(), &[0.0, 0.1, 0.3], &[0.0, 0.2, 0.7]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.csv");
        tab.write_csv(&path).unwrap();
        let back = TabulatedBounds::load_csv(&path).unwrap();
        assert_eq!(back.a, tab.a);
        assert_eq!(back.b, tab.b);
    }

    #[test]
    fn serde_round_trip() {
        let fam = BoundFamily::Rho { d: 1.0, a: -1.0, b: 0.0, eps: 0.1, rho: Rho::Power { k: 1.0, p: 1.25 } };
        let json = serde_json::to_string(&fam).unwrap();
        assert_eq!(serde_json::from_str::<BoundFamily>(&json).unwrap(), fam);
    }
}
