//! Adaptive Simpson quadrature, graded panels, and limits by horizon doubling.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Quad {
    pub value: f64,
    pub error: f64,
}

impl std::ops::Add for Quad {
    type Output = Quad;
    fn add(self, o: Quad) -> Quad {
        Quad { value: self.value + o.value, error: self.error + o.error }
    }
}

const MAX_DEPTH: u32 = 30;
const REL_TOL: f64 = 1e-12;
const INITIAL_PANELS: usize = 4;

#[allow(clippy::too_many_arguments)]
fn simpson_rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> Quad {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if !delta.is_finite() {
        return Quad { value: f64::NAN, error: f64::INFINITY };
    }
    let noise = (64.0 * f64::EPSILON).max(REL_TOL) * (left.abs() + right.abs());
    if depth == 0 || delta.abs() <= (15.0 * tol).max(noise) || m <= a || b <= m {
        return Quad { value: left + right + delta / 15.0, error: delta.abs() / 15.0 };
    }
    simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Adaptive Simpson on `[a, b]` to absolute tolerance `tol`, with Richardson correction.
pub fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> Quad {
    if b <= a {
        return Quad::default();
    }
    let h = (b - a) / INITIAL_PANELS as f64;
    let mut total = Quad::default();
    for k in 0..INITIAL_PANELS {
        let x0 = a + k as f64 * h;
        let x1 = if k + 1 == INITIAL_PANELS { b } else { x0 + h };
        let (f0, f1) = (f(x0), f(x1));
        let xm = 0.5 * (x0 + x1);
        let fm = f(xm);
        let whole = (x1 - x0) / 6.0 * (f0 + 4.0 * fm + f1);
        total = total + simpson_rec(f, x0, x1, f0, fm, f1, whole, tol / INITIAL_PANELS as f64, MAX_DEPTH);
    }
    total
}

/// Panels `[s, s+Δ], [s+Δ, s+2Δ], [s+2Δ, s+4Δ], …` up to `t`, graded toward `s`.
pub fn graded_breakpoints(s: f64, t: f64, gap: f64) -> Vec<f64> {
    let mut pts = vec![s];
    let mut width = gap;
    let mut x = s + gap;
    while x < t {
        pts.push(x);
        x += width;
        width *= 2.0;
    }
    pts.push(t);
    pts
}

/// Integral over `[s, t]` on graded panels.
pub fn integrate_graded<F: Fn(f64) -> f64>(f: &F, s: f64, t: f64, gap: f64, tol: f64) -> Quad {
    if t <= s {
        return Quad::default();
    }
    let pts = graded_breakpoints(s, t, gap);
    let per = tol / (pts.len() - 1) as f64;
    pts.windows(2).fold(Quad::default(), |acc, w| acc + simpson(f, w[0], w[1], per))
}

/// Settings shared by the doubling limits.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimitConfig {
    pub horizon_init: f64,
    pub horizon_max: f64,
    /// Absolute increment below which the sequence counts as converged.
    pub tol: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Limit {
    Finite { value: f64, error: f64, horizon: f64, extrapolated: bool },
    Infinite { last_value: f64, horizon: f64 },
}

impl Limit {
    pub fn value(&self) -> f64 {
        match self {
            Limit::Finite { value, .. } => *value,
            Limit::Infinite { .. } => f64::INFINITY,
        }
    }

    pub fn error(&self) -> f64 {
        match self {
            Limit::Finite { error, .. } => *error,
            Limit::Infinite { .. } => f64::INFINITY,
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, Limit::Finite { .. })
    }

    pub fn horizon(&self) -> f64 {
        match self {
            Limit::Finite { horizon, .. } | Limit::Infinite { horizon, .. } => *horizon,
        }
    }
}

const RATIO_WINDOW: usize = 3;
const RATIO_CEILING: f64 = 0.995;
/// Levels beyond this are treated as already infinite.
const BLOWUP: f64 = 1e100;

/// Limit of `level(H)` as `H` doubles from `horizon_init` to `horizon_max`.
///
/// At the cap, a geometric tail of increments is summed in closed form; anything
/// else, or a non-finite level, is reported as infinite.
pub fn doubling_limit<F>(mut level: F, cfg: &LimitConfig) -> Result<Limit>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut h = cfg.horizon_init.min(cfg.horizon_max);
    let mut v = level(h)?;
    let mut increments: Vec<f64> = Vec::new();
    loop {
        if !v.is_finite() || v.abs() > BLOWUP {
            return Ok(Limit::Infinite { last_value: v, horizon: h });
        }
        if 2.0 * h > cfg.horizon_max {
            break;
        }
        h *= 2.0;
        let next = level(h)?;
        if !next.is_finite() || next.abs() > BLOWUP {
            return Ok(Limit::Infinite { last_value: next, horizon: h });
        }
        let d = next - v;
        v = next;
        increments.push(d);
        if d.abs() <= cfg.tol + 1e-13 * v.abs() {
            return Ok(Limit::Finite { value: v, error: d.abs(), horizon: h, extrapolated: false });
        }
    }
    if increments.len() > RATIO_WINDOW {
        let tail = &increments[increments.len() - RATIO_WINDOW - 1..];
        let ratios: Vec<f64> = tail.windows(2).map(|w| w[1] / w[0]).collect();
        if ratios.iter().all(|r| r.is_finite() && *r > 0.0 && *r < RATIO_CEILING) {
            let r = *ratios.last().expect("nonempty window");
            let d = *increments.last().expect("nonempty increments");
            let correction = d * r / (1.0 - r);
            return Ok(Limit::Finite { value: v + correction, error: correction.abs(), horizon: h, extrapolated: true });
        }
    }
    Ok(Limit::Infinite { last_value: v, horizon: h })
}

/// [`doubling_limit`] for a supremum over `[0, H]`: each level is kept at least as large as the last,
/// and a rise no larger than the level's own error does not count.
pub fn sup_limit<F>(mut level: F, cfg: &LimitConfig) -> Result<Limit>
where
    F: FnMut(f64) -> Result<Quad>,
{
    let mut best = f64::NEG_INFINITY;
    doubling_limit(
        |h| {
            let q = level(h)?;
            if q.value.is_nan() {
                return Ok(q.value);
            }
            if q.value > best + q.error || best == f64::NEG_INFINITY {
                best = best.max(q.value);
            }
            Ok(best)
        },
        cfg,
    )
}

/// `∫_s^∞ f` by doubling the truncation `s + H`, integrating only the new panel each time.
pub fn improper_integral<F>(f: &F, s: f64, gap: f64, quad_tol: f64, cfg: &LimitConfig) -> Result<(Limit, f64)>
where
    F: Fn(f64) -> f64,
{
    let mut acc = Quad::default();
    let mut reached = s;
    let level = |h: f64| -> Result<f64> {
        let end = s + h;
        let piece = integrate_graded(f, reached, end, if reached == s { gap } else { h / 8.0 }, quad_tol);
        acc = acc + piece;
        reached = end;
        Ok(acc.value)
    };
    let lim = doubling_limit(level, cfg)?;
    Ok((lim, acc.error))
}

/// `{0} ∪ logspace(gap, upper, n-1)`.
pub fn log_grid(gap: f64, upper: f64, n: usize) -> Vec<f64> {
    let mut g = vec![0.0];
    if n <= 1 || upper <= gap {
        if upper > 0.0 {
            g.push(upper);
        }
        return g;
    }
    let (l0, l1) = (gap.ln(), upper.ln());
    for k in 0..n - 1 {
        g.push((l0 + (l1 - l0) * k as f64 / (n - 2).max(1) as f64).exp());
    }
    *g.last_mut().expect("nonempty grid") = upper;
    g
}

/// Maximum of `f` over `grid`, then refined once between the neighbours of the argmax.
pub fn refined_max<F>(f: &F, grid: &[f64], refine: usize) -> Result<(f64, f64)>
where
    F: Fn(f64) -> Result<f64> + Sync,
{
    let vals: Vec<f64> = grid.par_iter().map(|&x| f(x)).collect::<Result<Vec<_>>>()?;
    let (mut arg, mut best) = argmax(grid, &vals);
    if vals.iter().any(|v| v.is_nan()) {
        return Ok((f64::NAN, f64::NAN));
    }
    let i = grid.iter().position(|&x| x == arg).expect("argmax from grid");
    let lo = grid[i.saturating_sub(1)];
    let hi = grid[(i + 1).min(grid.len() - 1)];
    if hi > lo && refine > 0 {
        let pts: Vec<f64> = (1..=refine).map(|k| lo + (hi - lo) * k as f64 / (refine + 1) as f64).collect();
        let rv: Vec<f64> = pts.par_iter().map(|&x| f(x)).collect::<Result<Vec<_>>>()?;
        let (a2, b2) = argmax(&pts, &rv);
        if b2 > best || b2.is_nan() {
            arg = a2;
            best = b2;
        }
    }
    Ok((arg, best))
}

fn argmax(xs: &[f64], vs: &[f64]) -> (f64, f64) {
    let mut best = (xs[0], vs[0]);
    for (&x, &v) in xs.iter().zip(vs) {
        if v > best.1 || (v.is_infinite() && v > 0.0) {
            best = (x, v);
        }
    }
    best
}
