//! The admissibility constants α and β, the theorem gates, and the local factor `S(s)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{check_decay_condition, BoundFamily, DecayReport, Verdict};
use crate::error::{Error, Result};
use crate::functions::{Growth, Rho};
use crate::quadrature::{improper_integral, integrate_graded, log_grid, refined_max, sup_limit, Limit, LimitConfig, Quad};

/// Positive radius function `R(r)` of the local theorem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RadiusFunction {
    Constant { rho0: f64 },
    /// `δ e^{-β r}`
    Exp { delta: f64, beta: f64 },
    /// `δ (r+1)^{-β}`
    Poly { delta: f64, beta: f64 },
    /// `δ μ(r)^a`
    MuPower { delta: f64, a: f64, mu: Growth },
    /// `δ ρ'(r)^{1/q} e^{-β ρ(r)}`
    RhoForm { delta: f64, beta: f64, q: f64, rho: Rho },
}

impl RadiusFunction {
    pub fn ln_value(&self, r: f64) -> f64 {
        match self {
            RadiusFunction::Constant { rho0 } => rho0.ln(),
            RadiusFunction::Exp { delta, beta } => delta.ln() - beta * r,
            RadiusFunction::Poly { delta, beta } => delta.ln() - beta * r.ln_1p(),
            RadiusFunction::MuPower { delta, a, mu } => delta.ln() + a * mu.ln_value(r),
            RadiusFunction::RhoForm { delta, beta, q, rho } => delta.ln() + rho.derivative(r).ln() / q - beta * rho.value(r),
        }
    }

    pub fn value(&self, r: f64) -> f64 {
        self.ln_value(r).exp()
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            RadiusFunction::Constant { rho0 } => *rho0 > 0.0,
            RadiusFunction::Exp { delta, beta } | RadiusFunction::Poly { delta, beta } => *delta > 0.0 && *beta > 0.0,
            RadiusFunction::MuPower { delta, mu, .. } => *delta > 0.0 && mu.validate().is_ok(),
            RadiusFunction::RhoForm { delta, beta, q, rho } => {
                *delta > 0.0 && *beta > 0.0 && *q > 0.0 && rho.validate().is_ok()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Constraint(format!("radius must be positive: {self:?}")))
        }
    }

    /// `R(r)^q` as an envelope-style `(δ, shape)` pair, where the shape is recognised.
    fn power_shape(&self, q: f64) -> Option<Shape> {
        match *self {
            RadiusFunction::Constant { rho0 } => Some(Shape::Exp { delta: rho0.powf(q), rate: 0.0 }),
            RadiusFunction::Exp { delta, beta } => Some(Shape::Exp { delta: delta.powf(q), rate: q * beta }),
            RadiusFunction::Poly { delta, beta } => Some(Shape::Poly { delta: delta.powf(q), p: q * beta }),
            RadiusFunction::MuPower { delta, a, mu } => match mu {
                Growth::Exp { rate } => Some(Shape::Exp { delta: delta.powf(q), rate: -a * q * rate }),
                Growth::Power { p } => Some(Shape::Poly { delta: delta.powf(q), p: -a * q * p }),
            },
            RadiusFunction::RhoForm { delta, beta, q: qr, rho } if qr == q => {
                Some(Shape::Rho { delta: delta.powf(q), rate: q * beta, rho })
            }
            RadiusFunction::RhoForm { .. } => None,
        }
    }
}

/// `r ↦ Lip(f_r)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LipschitzEnvelope {
    Zero,
    Constant { delta: f64 },
    /// `δ e^{-rate r}`
    ExpDecay { delta: f64, rate: f64 },
    /// `δ (r+1)^{-p}`
    PolyDecay { delta: f64, p: f64 },
    /// `δ ρ'(r) e^{-2ε ρ(r)}`
    RhoDecay { delta: f64, eps: f64, rho: Rho },
    /// `2^q c R(r)^q`
    BallPower { c: f64, q: f64, radius: RadiusFunction },
    Scaled { factor: f64, inner: Box<LipschitzEnvelope> },
    /// Log-linear interpolation of positive samples, extrapolated from the last two.
    Tabulated { r: Vec<f64>, values: Vec<f64> },
}

/// Envelope shapes with known antiderivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
enum Shape {
    Exp { delta: f64, rate: f64 },
    Poly { delta: f64, p: f64 },
    /// `δ ρ' e^{-rate ρ}`
    Rho { delta: f64, rate: f64, rho: Rho },
}

impl Shape {
    fn scaled(self, k: f64) -> Shape {
        match self {
            Shape::Exp { delta, rate } => Shape::Exp { delta: k * delta, rate },
            Shape::Poly { delta, p } => Shape::Poly { delta: k * delta, p },
            Shape::Rho { delta, rate, rho } => Shape::Rho { delta: k * delta, rate, rho },
        }
    }
}

impl LipschitzEnvelope {
    pub fn ln_value(&self, r: f64) -> f64 {
        match self {
            LipschitzEnvelope::Zero => f64::NEG_INFINITY,
            LipschitzEnvelope::Constant { delta } => delta.ln(),
            LipschitzEnvelope::ExpDecay { delta, rate } => delta.ln() - rate * r,
            LipschitzEnvelope::PolyDecay { delta, p } => delta.ln() - p * r.ln_1p(),
            LipschitzEnvelope::RhoDecay { delta, eps, rho } => delta.ln() + rho.derivative(r).ln() - 2.0 * eps * rho.value(r),
            LipschitzEnvelope::BallPower { c, q, radius } => q * std::f64::consts::LN_2 + c.ln() + q * radius.ln_value(r),
            LipschitzEnvelope::Scaled { factor, inner } => factor.ln() + inner.ln_value(r),
            LipschitzEnvelope::Tabulated { r: nodes, values } => {
                let n = nodes.len();
                if n == 1 {
                    return values[0].ln();
                }
                let i = match nodes.partition_point(|&x| x <= r) {
                    0 => 0,
                    k => (k - 1).min(n - 2),
                };
                let w = (r - nodes[i]) / (nodes[i + 1] - nodes[i]);
                values[i].ln() * (1.0 - w) + values[i + 1].ln() * w
            }
        }
    }

    pub fn value(&self, r: f64) -> f64 {
        self.ln_value(r).exp()
    }

    pub fn is_zero(&self) -> bool {
        match self {
            LipschitzEnvelope::Zero => true,
            LipschitzEnvelope::Scaled { factor, inner } => *factor == 0.0 || inner.is_zero(),
            _ => false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Constraint(format!("envelope {m}: {self:?}")));
        match self {
            LipschitzEnvelope::Zero => Ok(()),
            LipschitzEnvelope::Constant { delta } if *delta > 0.0 => Ok(()),
            LipschitzEnvelope::ExpDecay { delta, rate } if *delta > 0.0 && *rate > 0.0 => Ok(()),
            LipschitzEnvelope::PolyDecay { delta, p } if *delta > 0.0 && *p > 0.0 => Ok(()),
            LipschitzEnvelope::RhoDecay { delta, eps, rho } if *delta > 0.0 && *eps > 0.0 => {
                rho.validate().map_err(Error::Constraint)
            }
            LipschitzEnvelope::BallPower { c, q, radius } if *c > 0.0 && *q > 0.0 => radius.validate(),
            LipschitzEnvelope::Scaled { factor, inner } if *factor >= 0.0 => inner.validate(),
            LipschitzEnvelope::Tabulated { r, values } => {
                if r.is_empty() || r.len() != values.len() || r[0] != 0.0 {
                    return bad("table must start at r = 0 with matching lengths");
                }
                if r.windows(2).any(|w| w[1] <= w[0]) || values.iter().any(|v| !(*v > 0.0)) {
                    return bad("table must be increasing in r with positive values");
                }
                Ok(())
            }
            _ => bad("parameters must be positive"),
        }
    }

    /// Splits off constant factors: `self = factor · core`.
    fn factored(&self) -> (f64, &LipschitzEnvelope) {
        match self {
            LipschitzEnvelope::Scaled { factor, inner } => {
                let (k, core) = inner.factored();
                (factor * k, core)
            }
            other => (1.0, other),
        }
    }

    fn shape(&self) -> Option<Shape> {
        match self {
            LipschitzEnvelope::Constant { delta } => Some(Shape::Exp { delta: *delta, rate: 0.0 }),
            LipschitzEnvelope::ExpDecay { delta, rate } => Some(Shape::Exp { delta: *delta, rate: *rate }),
            LipschitzEnvelope::PolyDecay { delta, p } => Some(Shape::Poly { delta: *delta, p: *p }),
            LipschitzEnvelope::RhoDecay { delta, eps, rho } => Some(Shape::Rho { delta: *delta, rate: 2.0 * eps, rho: *rho }),
            LipschitzEnvelope::BallPower { c, q, radius } => radius.power_shape(*q).map(|s| s.scaled(2f64.powf(*q) * c)),
            LipschitzEnvelope::Scaled { factor, inner } => inner.shape().map(|s| s.scaled(*factor)),
            LipschitzEnvelope::Zero | LipschitzEnvelope::Tabulated { .. } => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadratureConfig {
    pub quad_tol: f64,
    pub tail_tol: f64,
    pub horizon_init: f64,
    pub horizon_max: f64,
    pub sup_grid: usize,
    pub grid_min_gap: f64,
    /// Extra points inserted around a grid argmax.
    pub refine: usize,
    /// Also run the generic sup search when a closed form is available.
    pub cross_check: bool,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig {
            quad_tol: 1e-10,
            tail_tol: 1e-12,
            horizon_init: 10.0,
            horizon_max: 1e6,
            sup_grid: 64,
            grid_min_gap: 1e-3,
            refine: 8,
            cross_check: true,
        }
    }
}

impl QuadratureConfig {
    fn limit(&self) -> LimitConfig {
        LimitConfig { horizon_init: self.horizon_init, horizon_max: self.horizon_max, tol: self.tail_tol + self.quad_tol }
    }

    /// Horizons stretched by `1+s`, for tails that start at `s`.
    fn limit_from(&self, s: f64) -> LimitConfig {
        let k = 1.0 + s.max(0.0);
        LimitConfig { horizon_init: self.horizon_init * k, horizon_max: self.horizon_max * k, ..self.limit() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
    pub closed_form_used: bool,
    pub extrapolated: bool,
    pub horizon: f64,
}

impl Estimate {
    fn exact(value: f64) -> Self {
        Estimate { value, error: 0.0, closed_form_used: true, extrapolated: false, horizon: f64::INFINITY }
    }

    fn scaled(mut self, k: f64) -> Self {
        self.value *= k;
        self.error *= k;
        self
    }

    fn from_limit(lim: Limit, quad_err: f64, closed_form_used: bool, what: &str) -> Result<Self> {
        match lim {
            Limit::Finite { value, error, horizon, extrapolated } => {
                Ok(Estimate { value, error: error + quad_err, closed_form_used, extrapolated, horizon })
            }
            Limit::Infinite { horizon, .. } => {
                Err(Error::Divergence { horizon, what: format!("{what} = +inf (tail mass does not vanish)") })
            }
        }
    }
}

fn divergent(what: &str) -> Error {
    Error::Divergence { horizon: f64::INFINITY, what: format!("{what} = +inf") }
}

/// Closed forms for families whose sup is attained at the boundary.
fn analytic_alpha(bounds: &BoundFamily, shape: Shape) -> Option<f64> {
    let inf = f64::INFINITY;
    match (bounds, shape) {
        (BoundFamily::Exponential { d, eps, .. } | BoundFamily::ExpPolyB { d, eps, .. }, Shape::Exp { delta, rate }) => {
            Some(if rate > *eps { d * delta / (rate - eps) } else { inf })
        }
        (BoundFamily::Polynomial { d, eps, .. }, Shape::Poly { delta, p }) => {
            Some(if p > eps + 1.0 { d * delta / (p - eps - 1.0) } else { inf })
        }
        (BoundFamily::Rho { d, eps, rho, .. }, Shape::Rho { delta, rate, rho: r2 }) if *rho == r2 => {
            Some(if rate > *eps { d * delta / (rate - eps) } else { inf })
        }
        (BoundFamily::ConstantA { l, .. }, Shape::Exp { delta, rate }) => Some(if rate > 0.0 { l * delta / rate } else { inf }),
        _ => None,
    }
}

fn analytic_beta(bounds: &BoundFamily, shape: Shape) -> Option<f64> {
    let inf = f64::INFINITY;
    match (bounds, shape) {
        (BoundFamily::Exponential { d, a, b, eps }, Shape::Exp { delta, rate }) => {
            Some(if rate >= 2.0 * eps { d * d * delta / (b - a - eps + rate) } else { inf })
        }
        (BoundFamily::Polynomial { d, a, b, eps }, Shape::Poly { delta, p }) => {
            Some(if p >= 2.0 * eps + 1.0 { d * d * delta / (p + b - a - eps - 1.0) } else { inf })
        }
        (BoundFamily::Rho { d, a, b, eps, rho }, Shape::Rho { delta, rate, rho: r2 }) if *rho == r2 => {
            Some(if rate >= 2.0 * eps { d * d * delta / (b - a - eps + rate) } else { inf })
        }
        (BoundFamily::ConstantA { l, a, eps, d }, Shape::Exp { delta, rate }) => {
            Some(if rate >= *eps { l * d * delta / (rate - a - eps) } else { inf })
        }
        _ => None,
    }
}

/// α = sup_{t>s} (1/a(t,s)) ∫_s^t a(t,r) a(r,s) Lip(f_r) dr.
pub fn compute_alpha(bounds: &BoundFamily, lip: &LipschitzEnvelope, cfg: &QuadratureConfig) -> Result<Estimate> {
    let (k, core) = lip.factored();
    if lip.is_zero() {
        return Ok(Estimate::exact(0.0));
    }
    if let Some(v) = core.shape().and_then(|s| analytic_alpha(bounds, s)) {
        return if v.is_finite() { Ok(Estimate::exact(v).scaled(k)) } else { Err(divergent("alpha")) };
    }
    if let Some(pf) = bounds.as_product_form() {
        let f = |r: f64| (pf.frak_c.ln_value(r) + core.ln_value(r)).exp();
        let (lim, qerr) = improper_integral(&f, 0.0, cfg.grid_min_gap, cfg.quad_tol, &cfg.limit())?;
        return Ok(Estimate::from_limit(lim, qerr, true, "alpha")?.scaled(k));
    }
    Ok(compute_alpha_generic(bounds, core, cfg)?.scaled(k))
}

/// The sup search over `(t, s)` grids, without any closed-form shortcut.
pub fn compute_alpha_generic(bounds: &BoundFamily, lip: &LipschitzEnvelope, cfg: &QuadratureConfig) -> Result<Estimate> {
    if lip.is_zero() {
        return Ok(Estimate { closed_form_used: false, ..Estimate::exact(0.0) });
    }
    let gap = cfg.grid_min_gap;
    let pair = |t: f64, s: f64| -> Quad {
        let lat = bounds.ln_a(t, s);
        let f = |r: f64| (bounds.ln_a(t, r) + bounds.ln_a(r, s) - lat + lip.ln_value(r)).exp();
        integrate_graded(&f, s, t, gap, cfg.quad_tol)
    };
    let mut worst_err: f64 = 0.0;
    let level = |upper: f64| -> Result<Quad> {
        let grid = log_grid(gap, upper, cfg.sup_grid.max(2));
        let pairs: Vec<(f64, f64)> = grid
            .iter()
            .flat_map(|&s| grid.iter().filter(move |&&t| t >= s + gap).map(move |&t| (t, s)))
            .collect();
        let vals: Vec<Quad> = pairs.par_iter().map(|&(t, s)| pair(t, s)).collect();
        if vals.iter().any(|q| !q.value.is_finite()) {
            return Ok(Quad { value: f64::INFINITY, error: 0.0 });
        }
        let (mut best_i, mut best) = (0, f64::NEG_INFINITY);
        for (i, q) in vals.iter().enumerate() {
            if q.value > best {
                best = q.value;
                best_i = i;
            }
        }
        let mut err = vals[best_i].error;
        let (t0, s0) = pairs[best_i];
        let neighbours = |x: f64| {
            let i = grid.iter().position(|&g| g == x).expect("grid node");
            (grid[i.saturating_sub(1)], grid[(i + 1).min(grid.len() - 1)])
        };
        let ((tl, th), (sl, sh)) = (neighbours(t0), neighbours(s0));
        let m = cfg.refine + 2;
        let local: Vec<(f64, f64)> = (0..m)
            .flat_map(|i| (0..m).map(move |j| (tl + (th - tl) * i as f64 / (m - 1) as f64, sl + (sh - sl) * j as f64 / (m - 1) as f64)))
            .filter(|&(t, s)| t >= s + gap)
            .collect();
        for q_pair in local.par_iter().map(|&(t, s)| pair(t, s)).collect::<Vec<_>>() {
            if !q_pair.value.is_finite() {
                return Ok(Quad { value: f64::INFINITY, error: 0.0 });
            }
            if q_pair.value > best {
                best = q_pair.value;
                err = q_pair.error;
            }
        }
        worst_err = worst_err.max(err);
        Ok(Quad { value: best, error: err })
    };
    let lim = sup_limit(level, &cfg.limit())?;
    Estimate::from_limit(lim, worst_err, false, "alpha")
}

/// β = sup_s ∫_s^∞ b(r,s) a(r,s) Lip(f_r) dr.
pub fn compute_beta(bounds: &BoundFamily, lip: &LipschitzEnvelope, cfg: &QuadratureConfig) -> Result<Estimate> {
    let (k, core) = lip.factored();
    if lip.is_zero() {
        return Ok(Estimate::exact(0.0));
    }
    if let Some(v) = core.shape().and_then(|s| analytic_beta(bounds, s)) {
        return if v.is_finite() { Ok(Estimate::exact(v).scaled(k)) } else { Err(divergent("beta")) };
    }
    let mut est = compute_beta_generic(bounds, core, cfg)?;
    est.closed_form_used = bounds.as_product_form().is_some();
    Ok(est.scaled(k))
}

/// `∫_s^∞ b(r,s) a(r,s) Lip(f_r) dr` for a single `s`.
pub fn beta_integral(bounds: &BoundFamily, lip: &LipschitzEnvelope, s: f64, cfg: &QuadratureConfig) -> Result<(Limit, f64)> {
    let f = |r: f64| (bounds.ln_b(r, s) + bounds.ln_a(r, s) + lip.ln_value(r)).exp();
    improper_integral(&f, s, cfg.grid_min_gap, cfg.quad_tol, &cfg.limit_from(s))
}

/// The sup search over `s`, without any closed-form shortcut.
pub fn compute_beta_generic(bounds: &BoundFamily, lip: &LipschitzEnvelope, cfg: &QuadratureConfig) -> Result<Estimate> {
    if lip.is_zero() {
        return Ok(Estimate { closed_form_used: false, ..Estimate::exact(0.0) });
    }
    let errs = std::sync::Mutex::new(0.0f64);
    let at = |s: f64| -> Result<f64> {
        let (lim, q) = beta_integral(bounds, lip, s, cfg)?;
        let mut e = errs.lock().expect("error accumulator");
        *e = e.max(lim.error() + q);
        Ok(lim.value())
    };
    let level = |upper: f64| -> Result<Quad> {
        let grid = log_grid(cfg.grid_min_gap, upper, cfg.sup_grid.max(2));
        let best = refined_max(&at, &grid, cfg.refine)?.1;
        let noise = *errs.lock().expect("error accumulator");
        Ok(Quad { value: best, error: if noise.is_finite() { noise } else { 0.0 } })
    };
    let lim = sup_limit(level, &cfg.limit())?;
    let q = *errs.lock().expect("error accumulator");
    Estimate::from_limit(lim, if q.is_finite() { q } else { 0.0 }, false, "beta")
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gate {
    pub passed: bool,
    pub margin: f64,
}

/// `2α + max{2β, √β} < 1`.
pub fn check_global_gate(alpha: f64, beta: f64) -> Gate {
    let margin = 1.0 - (2.0 * alpha + (2.0 * beta).max(beta.sqrt()));
    Gate { passed: margin > 0.0, margin }
}

/// `4α + max{4β, √(2β)} < 1`.
pub fn check_local_gate(alpha: f64, beta: f64) -> Gate {
    let margin = 1.0 - (4.0 * alpha + (4.0 * beta).max((2.0 * beta).sqrt()));
    Gate { passed: margin > 0.0, margin }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SFactor {
    pub s: f64,
    /// `sup_{t>=s} a(t,s) R(s)/R(t)`; `None` when unbounded.
    pub sup: Option<f64>,
    /// `max{1, 2/(1-4α) · sup}`; `None` when unbounded.
    pub value: Option<f64>,
    pub closed_form_used: bool,
}

impl SFactor {
    pub fn is_finite(&self) -> bool {
        self.value.is_some()
    }
}

fn analytic_s_sup(bounds: &BoundFamily, radius: &RadiusFunction, s: f64) -> Option<Option<f64>> {
    match (bounds, radius) {
        (BoundFamily::Exponential { d, a, eps, .. }, RadiusFunction::Exp { beta, .. }) => {
            Some((a + beta <= 0.0).then(|| d * (eps * s).exp()))
        }
        (BoundFamily::Polynomial { d, a, eps, .. }, RadiusFunction::Poly { beta, .. }) => {
            Some((a + beta <= 0.0).then(|| d * (eps * s.ln_1p()).exp()))
        }
        (BoundFamily::MuNu { d, a, eps, mu, nu, .. }, RadiusFunction::MuPower { a: ar, mu: mr, .. }) if mu == mr => {
            Some((a - ar <= 0.0).then(|| d * (eps * nu.ln_value(s)).exp()))
        }
        (BoundFamily::Rho { d, a, eps, rho, .. }, RadiusFunction::RhoForm { beta, rho: rr, .. }) if rho == rr => {
            let nondecreasing_derivative = match rho {
                Rho::Linear { .. } => true,
                Rho::Power { p, .. } => *p >= 1.0,
            };
            (nondecreasing_derivative && a + beta <= 0.0).then(|| Some(d * (eps * rho.value(s)).exp()))
        }
        _ => None,
    }
}

/// `S(s) = max{1, 2/(1-4α) sup_{t>=s} a(t,s) R(s)/R(t)}`.
pub fn compute_s(bounds: &BoundFamily, radius: &RadiusFunction, alpha: f64, s: f64, cfg: &QuadratureConfig) -> Result<SFactor> {
    if !(alpha < 0.25) {
        return Err(Error::Precondition(format!("alpha = {alpha} must be below 1/4 for the local theorem")));
    }
    let pref = 2.0 / (1.0 - 4.0 * alpha);
    if let Some(sup) = analytic_s_sup(bounds, radius, s) {
        return Ok(SFactor { s, sup, value: sup.map(|x| (pref * x).max(1.0)), closed_form_used: true });
    }
    let sup = s_sup_numeric(bounds, radius, s, cfg)?;
    Ok(SFactor { s, sup, value: sup.map(|x| (pref * x).max(1.0)), closed_form_used: false })
}

/// Numeric `sup_{t>=s} a(t,s) R(s)/R(t)` by horizon doubling; `None` when unbounded.
pub fn s_sup_numeric(bounds: &BoundFamily, radius: &RadiusFunction, s: f64, cfg: &QuadratureConfig) -> Result<Option<f64>> {
    let lrs = radius.ln_value(s);
    let at = |t: f64| -> Result<f64> { Ok((bounds.ln_a(t, s) + lrs - radius.ln_value(t)).exp()) };
    let level = |h: f64| -> Result<Quad> {
        let grid: Vec<f64> = log_grid(cfg.grid_min_gap, h, cfg.sup_grid.max(2)).into_iter().map(|u| s + u).collect();
        Ok(Quad { value: refined_max(&at, &grid, cfg.refine)?.1, error: 0.0 })
    };
    let lim = sup_limit(level, &cfg.limit())?;
    Ok(lim.is_finite().then(|| lim.value()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    /// `+inf` (serialised as null) when the integral diverges.
    pub alpha: f64,
    pub beta: f64,
    pub alpha_err: f64,
    pub beta_err: f64,
    pub divergent: bool,
    pub decay_ok: Verdict,
    pub decay: DecayReport,
    pub global_gate: Gate,
    pub local_gate: Gate,
    pub closed_form_used: bool,
    pub alpha_generic: Option<f64>,
    pub beta_generic: Option<f64>,
}

/// Settings for the numeric decay check run inside [`assess`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecayCheckConfig {
    pub s_samples: Vec<f64>,
    pub horizon: f64,
    pub threshold: f64,
}

impl Default for DecayCheckConfig {
    fn default() -> Self {
        DecayCheckConfig { s_samples: vec![0.0, 1.0, 5.0, 10.0], horizon: 1e6, threshold: 1e-2 }
    }
}

/// α, β, decay verdict and both gates. Divergent integrals give `alpha`/`beta = +inf`.
pub fn assess(bounds: &BoundFamily, lip: &LipschitzEnvelope, cfg: &QuadratureConfig, decay: &DecayCheckConfig) -> Result<AdmissibilityReport> {
    bounds.validate()?;
    lip.validate()?;
    let unpack = |r: Result<Estimate>| -> Result<Option<Estimate>> {
        match r {
            Ok(e) => Ok(Some(e)),
            Err(Error::Divergence { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    };
    let alpha = unpack(compute_alpha(bounds, lip, cfg))?;
    let beta = unpack(compute_beta(bounds, lip, cfg))?;
    let (a, ae) = alpha.map_or((f64::INFINITY, f64::INFINITY), |e| (e.value, e.error));
    let (b, be) = beta.map_or((f64::INFINITY, f64::INFINITY), |e| (e.value, e.error));
    let closed = alpha.is_some_and(|e| e.closed_form_used) && beta.is_some_and(|e| e.closed_form_used);
    let (mut ag, mut bg) = (None, None);
    if cfg.cross_check && alpha.is_some() && beta.is_some() && !lip.is_zero() {
        let (_, core) = lip.factored();
        let k = lip.factored().0;
        ag = compute_alpha_generic(bounds, core, cfg).ok().map(|e| e.value * k);
        bg = compute_beta_generic(bounds, core, cfg).ok().map(|e| e.value * k);
    }
    let decay_report = check_decay_condition(bounds, &decay.s_samples, decay.horizon, decay.threshold);
    Ok(AdmissibilityReport {
        alpha: a,
        beta: b,
        alpha_err: ae,
        beta_err: be,
        divergent: alpha.is_none() || beta.is_none(),
        decay_ok: decay_report.verdict,
        decay: decay_report,
        global_gate: check_global_gate(a, b),
        local_gate: check_local_gate(a, b),
        closed_form_used: closed,
        alpha_generic: ag,
        beta_generic: bg,
    })
}
