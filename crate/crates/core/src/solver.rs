//! Fixed-point construction of the invariant graph: inner iteration for the
//! `E`-trajectory, outer iteration for the graph itself.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::admissibility::{
    assess, check_global_gate, check_local_gate, compute_s, AdmissibilityReport, DecayCheckConfig, LipschitzEnvelope, QuadratureConfig,
    RadiusFunction, SFactor,
};
use crate::bounds::{BoundFamily, Verdict};
use crate::error::{Error, Result};
use crate::linear_system::LinearSystem;
use crate::manifold::ManifoldGraph;
use crate::quadrature::{improper_integral, LimitConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub s_min: f64,
    pub s_max: f64,
    /// Uniform nodes on `[s_min, s_max]`.
    pub active_nodes: usize,
    /// Geometric nodes on `(s_max, horizon]`.
    pub tail_nodes: usize,
    pub xi_nodes: usize,
    /// Box halfwidth for global solves; local solves use `R(t)`.
    pub xi_halfwidth: f64,
    pub inner_tol: f64,
    pub outer_tol: f64,
    pub lip_tol: f64,
    pub tail_tol: f64,
    pub inner_max_iter: usize,
    pub outer_max_iter: usize,
    pub horizon_init: f64,
    pub horizon_max: f64,
    /// Number of midpoint halvings applied to both grids.
    pub refine: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            s_min: 0.0,
            s_max: 10.0,
            active_nodes: 121,
            tail_nodes: 80,
            xi_nodes: 33,
            xi_halfwidth: 1.0,
            inner_tol: 1e-8,
            outer_tol: 1e-8,
            lip_tol: 1e-6,
            tail_tol: 1e-9,
            inner_max_iter: 200,
            outer_max_iter: 100,
            horizon_init: 10.0,
            horizon_max: 1e9,
            refine: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.s_max > self.s_min) || !self.s_min.is_finite() || !self.s_max.is_finite() {
            return bad("solver range needs s_min < s_max");
        }
        if self.active_nodes < 3 || self.tail_nodes < 2 {
            return bad("solver needs at least 3 active and 2 tail nodes");
        }
        if self.xi_nodes < 3 || self.xi_nodes % 2 == 0 {
            return bad("xi_nodes must be odd and at least 3");
        }
        if !(self.xi_halfwidth > 0.0) {
            return bad("xi_halfwidth must be positive");
        }
        for (name, v) in [("inner_tol", self.inner_tol), ("outer_tol", self.outer_tol), ("tail_tol", self.tail_tol), ("lip_tol", self.lip_tol)] {
            if !(v > 0.0) {
                return bad(&format!("{name} must be positive"));
            }
        }
        if !(self.horizon_init > 0.0 && self.horizon_max >= self.horizon_init) {
            return bad("solver horizons need 0 < horizon_init <= horizon_max");
        }
        Ok(())
    }
}

/// A fixed point (or iterate) of the inner map for one base node and one `ξ` node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InnerTrajectory {
    pub s_index: usize,
    pub s: f64,
    pub xi: Vec<f64>,
    pub times: Vec<f64>,
    /// `E` coordinates at each time.
    pub samples: Vec<Vec<f64>>,
    /// `sup_t ‖x(t)‖ / (a(t,s) ‖ξ‖)`.
    pub weighted_norm: f64,
    pub error_bound: f64,
    pub iterations: usize,
    /// Successive-difference ratios `d_{k+1}/d_k`.
    pub ratios: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepStats {
    pub inner_max_ratio: f64,
    pub inner_max_iterations: usize,
    pub inner_max_bound: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub q: f64,
    pub horizon: f64,
    pub outer_distances: Vec<f64>,
    pub outer_ratios: Vec<f64>,
    pub sweeps: Vec<SweepStats>,
    /// Distance from the last iterate to the fixed point, in the graph metric.
    pub outer_bound: f64,
    pub tail_residual: f64,
    pub quadrature_max: f64,
    pub clamp_max: f64,
    pub interpolation_max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub graph: ManifoldGraph,
    pub diagnostics: SolveDiagnostics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalSolution {
    pub solution: Solution,
    /// α and β of `f` restricted to the balls `B(R(t))`.
    pub ball_alpha: f64,
    pub ball_beta: f64,
    pub local_margin: f64,
    pub s_factors: Vec<SFactor>,
    /// `R(s) / (2 S(s))` at the active nodes.
    pub entry_radius: Vec<f64>,
}

struct NodeOutcome {
    phi: Vec<f64>,
    quad_rel: f64,
    clamp_rel: f64,
    inner_bound: f64,
    iterations: usize,
    max_ratio: f64,
}

struct Tables {
    times: Vec<f64>,
    active_len: usize,
    halfwidth: Vec<f64>,
    /// `T_{k+1,k}|_E`, column-major.
    ue: Vec<f64>,
    /// `T_{k+2,k}|_E`.
    ue2: Vec<f64>,
    /// Per base node `i`: `(T_{t_k,s_i}|_F)^{-1}` for `k >= i`.
    w: Vec<Vec<f64>>,
    wnorm: Vec<Vec<f64>>,
    /// Per base node `i`: `a(t_k, s_i)` for `k >= i`.
    a: Vec<Vec<f64>>,
    lip: Vec<f64>,
    tail_rel: Vec<f64>,
}

fn matvec(m: &[f64], n: usize, v: &[f64], out: &mut [f64]) {
    for (r, o) in out.iter_mut().enumerate().take(n) {
        *o = (0..n).map(|c| m[r + c * n] * v[c]).sum();
    }
}

fn matmul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for c in 0..n {
        for r in 0..n {
            out[r + c * n] = (0..n).map(|k| a[r + k * n] * b[k + c * n]).sum();
        }
    }
    out
}

fn frobenius(m: &[f64]) -> f64 {
    m.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Ratio `r` with `h (r^n − 1)/(r − 1) = length`.
fn geometric_ratio(h: f64, n: usize, length: f64) -> f64 {
    if length <= h * n as f64 {
        return 1.0;
    }
    let total = |r: f64| h * (r.powi(n as i32) - 1.0) / (r - 1.0);
    let (mut lo, mut hi) = (1.0 + 1e-12, 2.0);
    while total(hi) < length {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if total(mid) < length {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn halve(grid: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * grid.len() - 1);
    for w in grid.windows(2) {
        out.push(w[0]);
        out.push(0.5 * (w[0] + w[1]));
    }
    out.push(*grid.last().expect("nonempty grid"));
    out
}

/// Uniform active part followed by a geometric tail ending at `horizon`.
pub fn time_grid(cfg: &SolverConfig, horizon: f64) -> (Vec<f64>, usize) {
    let na = cfg.active_nodes;
    let h = (cfg.s_max - cfg.s_min) / (na - 1) as f64;
    let mut t: Vec<f64> = (0..na).map(|k| cfg.s_min + h * k as f64).collect();
    t[na - 1] = cfg.s_max;
    let n = cfg.tail_nodes;
    let length = horizon - cfg.s_max;
    let r = geometric_ratio(h, n, length);
    let first = if r == 1.0 { length / n as f64 } else { h };
    let mut acc = cfg.s_max;
    let mut step = first;
    for k in 0..n {
        acc += step;
        t.push(if k + 1 == n { horizon } else { acc });
        step *= r;
    }
    let mut active = na;
    for _ in 0..cfg.refine {
        t = halve(&t);
        active = 2 * active - 1;
    }
    (t, active)
}

/// `2/(1−2α) ∫_from^∞ b(r,s) a(r,s) Lip(r) dr`: what truncating the outer integral at `from` can cost per unit `‖ξ‖`.
fn tail_bound(bounds: &BoundFamily, lip: &LipschitzEnvelope, alpha: f64, s: f64, from: f64, cfg: &SolverConfig) -> Result<f64> {
    if lip.is_zero() {
        return Ok(0.0);
    }
    let f = |r: f64| (bounds.ln_b(r, s) + bounds.ln_a(r, s) + lip.ln_value(r)).exp();
    let k = 1.0 + from;
    let lcfg = LimitConfig { horizon_init: cfg.horizon_init * k, horizon_max: cfg.horizon_max * k, tol: 1e-3 * cfg.tail_tol };
    let (lim, qerr) = improper_integral(&f, from, 1e-2, 1e-3 * cfg.tail_tol, &lcfg)?;
    if !lim.is_finite() {
        return Ok(f64::INFINITY);
    }
    Ok(2.0 / (1.0 - 2.0 * alpha) * (lim.value() + lim.error() + qerr))
}

/// Per-node `ξ` box halfwidth.
#[derive(Clone, Debug)]
pub enum BoxRule {
    Constant(f64),
    Radius(RadiusFunction),
}

impl BoxRule {
    fn at(&self, t: f64) -> f64 {
        match self {
            BoxRule::Constant(l) => *l,
            BoxRule::Radius(r) => r.value(t),
        }
    }
}

/// Solver state for one system, bound family, perturbation and pair of constants.
pub struct ManifoldSolver<'a> {
    system: &'a LinearSystem,
    f: &'a crate::perturbation::Perturbation,
    alpha: f64,
    beta: f64,
    cfg: SolverConfig,
    dim_e: usize,
    dim_f: usize,
    tables: Tables,
}

impl<'a> ManifoldSolver<'a> {
    /// Builds the grids, the horizon and the linear-part tables.
    pub fn new(
        system: &'a LinearSystem,
        bounds: &BoundFamily,
        f: &'a crate::perturbation::Perturbation,
        alpha: f64,
        beta: f64,
        rule: BoxRule,
        cfg: SolverConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let (dim_e, dim_f) = (system.splitting().dim_e(), system.splitting().dim_f());
        if dim_e == 0 || dim_e > 2 {
            return Err(Error::Constraint(format!("the solver supports dim E in 1..=2, got {dim_e}")));
        }
        f.check_dims(dim_e, dim_f)?;
        if !(alpha >= 0.0 && beta >= 0.0 && 2.0 * alpha < 1.0) {
            return Err(Error::Precondition(format!("need 0 <= 2α < 1 and β >= 0, got α = {alpha}, β = {beta}")));
        }
        let q = beta / (1.0 - 2.0 * alpha).powi(2);
        if !(q < 1.0) {
            return Err(Error::Precondition(format!("outer contraction constant {q} is not below 1")));
        }
        let lip_env = f.envelope().cloned().ok_or_else(|| Error::Precondition("perturbation has no Lipschitz envelope".into()))?;
        let box_norm = |t: f64| rule.at(t) * (dim_e as f64).sqrt();

        let mut span = cfg.horizon_init;
        let horizon = loop {
            let end = cfg.s_max + span;
            let res = [cfg.s_min, cfg.s_max]
                .iter()
                .map(|&s| tail_bound(bounds, &lip_env, alpha, s, end, &cfg).map(|v| v * box_norm(s)))
                .collect::<Result<Vec<f64>>>()?
                .into_iter()
                .fold(0.0, f64::max);
            if res <= cfg.tail_tol {
                break end;
            }
            if 2.0 * span > cfg.horizon_max {
                return Err(Error::Truncation { residual: res, horizon: end });
            }
            span *= 2.0;
        };

        let (times, active_len) = time_grid(&cfg, horizon);
        let n = times.len();
        let (de, df) = (dim_e, dim_f);
        let blocks: Vec<(Vec<f64>, Vec<f64>)> = (0..n - 1)
            .into_par_iter()
            .map(|k| -> Result<(Vec<f64>, Vec<f64>)> {
                let (e, _) = system.restricted(times[k + 1], times[k])?;
                let vinv = system.inverse_f_block(times[k + 1], times[k])?;
                Ok((e.as_slice().to_vec(), vinv.as_slice().to_vec()))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut ue = Vec::with_capacity((n - 1) * de * de);
        for (e, _) in &blocks {
            ue.extend_from_slice(e);
        }
        let mut ue2 = Vec::with_capacity((n.saturating_sub(2)) * de * de);
        for k in 0..n.saturating_sub(2) {
            ue2.extend(matmul(&blocks[k + 1].0, &blocks[k].0, de));
        }
        let eye: Vec<f64> = (0..df * df).map(|p| if p % (df + 1) == 0 { 1.0 } else { 0.0 }).collect();
        let per_base: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut w = Vec::with_capacity((n - i) * df * df);
                let mut wn = Vec::with_capacity(n - i);
                let mut cur = eye.clone();
                for k in i..n {
                    if k > i {
                        cur = matmul(&cur, &blocks[k - 1].1, df);
                    }
                    wn.push(frobenius(&cur));
                    w.extend_from_slice(&cur);
                }
                let a: Vec<f64> = (i..n).map(|k| bounds.ln_a(times[k], times[i]).exp()).collect();
                (w, wn, a)
            })
            .collect();
        let mut w = Vec::with_capacity(n);
        let mut wnorm = Vec::with_capacity(n);
        let mut a = Vec::with_capacity(n);
        for (wi, wni, ai) in per_base {
            w.push(wi);
            wnorm.push(wni);
            a.push(ai);
        }
        let lip: Vec<f64> = times.iter().map(|&t| lip_env.value(t)).collect();
        let tail_rel = times
            .par_iter()
            .map(|&s| tail_bound(bounds, &lip_env, alpha, s, horizon, &cfg))
            .collect::<Result<Vec<f64>>>()?;
        let halfwidth = times.iter().map(|&t| rule.at(t)).collect();
        Ok(ManifoldSolver {
            system,
            f,
            alpha,
            beta,
            cfg,
            dim_e,
            dim_f,
            tables: Tables { times, active_len, halfwidth, ue, ue2, w, wnorm, a, lip, tail_rel },
        })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    pub fn system(&self) -> &LinearSystem {
        self.system
    }

    pub fn times(&self) -> &[f64] {
        &self.tables.times
    }

    pub fn horizon(&self) -> f64 {
        *self.tables.times.last().expect("nonempty grid")
    }

    /// Outer contraction constant `β/(1−2α)²`.
    pub fn q(&self) -> f64 {
        self.beta / (1.0 - 2.0 * self.alpha).powi(2)
    }

    pub fn zero_graph(&self) -> ManifoldGraph {
        let mut g = ManifoldGraph::zero(
            self.dim_e,
            self.dim_f,
            self.tables.times.clone(),
            self.tables.active_len,
            self.xi_nodes(),
            self.tables.halfwidth.clone(),
        )
        .expect("solver grids are validated");
        g.alpha = self.alpha;
        g.beta = self.beta;
        g
    }

    fn xi_nodes(&self) -> usize {
        let mut n = self.cfg.xi_nodes;
        for _ in 0..self.cfg.refine {
            n = 2 * n - 1;
        }
        n
    }

    /// Index of the time node equal to `s`, if any.
    pub fn node_index(&self, s: f64) -> Option<usize> {
        self.tables.times.iter().position(|&t| t == s)
    }

    fn weighted(&self, i: usize, xi_norm: f64, x: &[f64], y: &[f64]) -> f64 {
        if xi_norm == 0.0 {
            return 0.0;
        }
        let de = self.dim_e;
        let mut worst: f64 = 0.0;
        for (m, a) in self.tables.a[i].iter().enumerate() {
            worst = worst.max(dist(&x[m * de..(m + 1) * de], &y[m * de..(m + 1) * de]) / (a * xi_norm));
        }
        worst
    }

    fn seed(&self, i: usize, xi: &[f64]) -> Vec<f64> {
        let de = self.dim_e;
        let len = self.tables.times.len() - i;
        let mut x = vec![0.0; len * de];
        x[..de].copy_from_slice(xi);
        for m in 0..len - 1 {
            let k = i + m;
            let (head, tail) = x.split_at_mut((m + 1) * de);
            matvec(&self.tables.ue[k * de * de..(k + 1) * de * de], de, &head[m * de..], &mut tail[..de]);
        }
        x
    }

    /// `E` and `F` parts of `f(t_k, x, φ(t_k, x))`; returns the clamp distance.
    fn forcing(&self, graph: &ManifoldGraph, k: usize, x: &[f64], phi: &mut [f64], fx: &mut [f64], fy: &mut [f64]) -> f64 {
        let d = graph.eval_at_node_clamped(k, x, phi);
        self.f.eval_into(self.tables.times[k], x, phi, fx, fy);
        d
    }

    fn j_into(&self, graph: &ManifoldGraph, i: usize, x: &[f64], y: &mut [f64], g: &mut [f64]) {
        let (de, df) = (self.dim_e, self.dim_f);
        let t = &self.tables.times;
        let len = t.len() - i;
        let mut phi = vec![0.0; df];
        let mut fy = vec![0.0; df];
        for m in 0..len {
            self.forcing(graph, i + m, &x[m * de..(m + 1) * de], &mut phi, &mut g[m * de..(m + 1) * de], &mut fy);
        }
        y[..de].copy_from_slice(&x[..de]);
        let mut tmp = vec![0.0; de];
        for m in 0..len - 1 {
            let k = i + m;
            let h2 = 0.5 * (t[k + 1] - t[k]);
            for c in 0..de {
                tmp[c] = y[m * de + c] + h2 * g[m * de + c];
            }
            let (head, tail) = y.split_at_mut((m + 1) * de);
            let _ = head;
            matvec(&self.tables.ue[k * de * de..(k + 1) * de * de], de, &tmp, &mut tail[..de]);
            for c in 0..de {
                tail[c] += h2 * g[(m + 1) * de + c];
            }
        }
    }

    fn inner(&self, graph: &ManifoldGraph, i: usize, xi: &[f64]) -> Result<(Vec<f64>, f64, usize, Vec<f64>)> {
        let de = self.dim_e;
        let len = self.tables.times.len() - i;
        let xi_norm = norm(xi);
        let mut x = self.seed(i, xi);
        if xi_norm == 0.0 {
            return Ok((x, 0.0, 1, Vec::new()));
        }
        let mut y = vec![0.0; len * de];
        let mut g = vec![0.0; len * de];
        let k = 2.0 * self.alpha / (1.0 - 2.0 * self.alpha);
        let mut ratios = Vec::new();
        let mut prev = f64::NAN;
        for it in 1..=self.cfg.inner_max_iter {
            self.j_into(graph, i, &x, &mut y, &mut g);
            let d = self.weighted(i, xi_norm, &x, &y);
            if prev.is_finite() && prev > 0.0 {
                ratios.push(d / prev);
            }
            prev = d;
            std::mem::swap(&mut x, &mut y);
            if d == 0.0 || d * k < self.cfg.inner_tol {
                return Ok((x, d * k, it, ratios));
            }
        }
        Err(Error::NonConvergence {
            what: format!("inner fixed point at s = {}", self.tables.times[i]),
            iterations: self.cfg.inner_max_iter,
            ratio: ratios.last().copied().unwrap_or(f64::NAN),
        })
    }

    fn trajectory(&self, i: usize, xi: &[f64], x: Vec<f64>, error_bound: f64, iterations: usize, ratios: Vec<f64>) -> InnerTrajectory {
        let de = self.dim_e;
        let xi_norm = norm(xi);
        let samples: Vec<Vec<f64>> = x.chunks(de).map(|c| c.to_vec()).collect();
        let weighted_norm = if xi_norm == 0.0 {
            0.0
        } else {
            samples.iter().zip(&self.tables.a[i]).map(|(v, a)| norm(v) / (a * xi_norm)).fold(0.0, f64::max)
        };
        InnerTrajectory {
            s_index: i,
            s: self.tables.times[i],
            xi: xi.to_vec(),
            times: self.tables.times[i..].to_vec(),
            samples,
            weighted_norm,
            error_bound,
            iterations,
            ratios,
        }
    }

    /// The inner seed `x_0(t, ξ) = T_{t,s} ξ` at base node `i`.
    pub fn seed_trajectory(&self, i: usize, xi: &[f64]) -> Result<InnerTrajectory> {
        self.check_node(i, xi)?;
        Ok(self.trajectory(i, xi, self.seed(i, xi), f64::NAN, 0, Vec::new()))
    }

    fn check_node(&self, i: usize, xi: &[f64]) -> Result<()> {
        if i >= self.tables.times.len() {
            return Err(Error::Domain(format!("time node {i} out of range")));
        }
        if xi.len() != self.dim_e {
            return Err(Error::Domain(format!("ξ has length {}, expected {}", xi.len(), self.dim_e)));
        }
        Ok(())
    }

    /// One application of the inner map to `x`.
    pub fn apply_j(&self, graph: &ManifoldGraph, x: &InnerTrajectory) -> Result<InnerTrajectory> {
        self.check_node(x.s_index, &x.xi)?;
        let de = self.dim_e;
        let flat: Vec<f64> = x.samples.iter().flatten().copied().collect();
        if flat.len() != (self.tables.times.len() - x.s_index) * de {
            return Err(Error::Domain("trajectory does not match the solver grid".into()));
        }
        let mut y = vec![0.0; flat.len()];
        let mut g = vec![0.0; flat.len()];
        self.j_into(graph, x.s_index, &flat, &mut y, &mut g);
        Ok(self.trajectory(x.s_index, &x.xi, y, f64::NAN, 0, Vec::new()))
    }

    /// Fixed point of the inner map at base node `i`.
    pub fn solve_inner(&self, graph: &ManifoldGraph, i: usize, xi: &[f64]) -> Result<InnerTrajectory> {
        self.check_node(i, xi)?;
        let (x, bound, it, ratios) = self.inner(graph, i, xi)?;
        Ok(self.trajectory(i, xi, x, bound, it, ratios))
    }

    /// `sup_t ‖x(t) − y(t)‖ / (a(t,s) ‖ξ‖)`.
    pub fn weighted_distance(&self, x: &InnerTrajectory, y: &InnerTrajectory) -> f64 {
        let fx: Vec<f64> = x.samples.iter().flatten().copied().collect();
        let fy: Vec<f64> = y.samples.iter().flatten().copied().collect();
        self.weighted(x.s_index, norm(&x.xi), &fx, &fy)
    }

    /// `(Φφ)(s_i, ξ)` for a single `ξ`.
    pub fn phi_at(&self, graph: &ManifoldGraph, i: usize, xi: &[f64]) -> Result<Vec<f64>> {
        self.check_graph(graph)?;
        self.check_node(i, xi)?;
        Ok(self.node(graph, i, xi)?.phi)
    }

    fn node(&self, graph: &ManifoldGraph, i: usize, xi: &[f64]) -> Result<NodeOutcome> {
        let (de, df) = (self.dim_e, self.dim_f);
        let t = &self.tables.times;
        let n = t.len();
        let len = n - i;
        let xi_norm = norm(xi);
        if xi_norm == 0.0 {
            return Ok(NodeOutcome { phi: vec![0.0; df], quad_rel: 0.0, clamp_rel: 0.0, inner_bound: 0.0, iterations: 1, max_ratio: 0.0 });
        }
        let (x, inner_bound, iterations, ratios) = self.inner(graph, i, xi)?;
        let mut gx = vec![0.0; len * de];
        let mut gy = vec![0.0; len * df];
        let mut phi = vec![0.0; df];
        let mut clamp = 0.0;
        let ell = 2.0 * self.beta / (1.0 - 2.0 * self.alpha);
        let w = &self.tables.w[i];
        let mut wg = vec![0.0; len * df];
        for m in 0..len {
            let k = i + m;
            let d = self.forcing(graph, k, &x[m * de..(m + 1) * de], &mut phi, &mut gx[m * de..(m + 1) * de], &mut gy[m * df..(m + 1) * df]);
            matvec(&w[m * df * df..(m + 1) * df * df], df, &gy[m * df..(m + 1) * df], &mut wg[m * df..(m + 1) * df]);
            if d > 0.0 {
                let hbar = 0.5 * (if k + 1 < n { t[k + 1] - t[k] } else { 0.0 } + if k > i { t[k] - t[k - 1] } else { 0.0 });
                clamp += 2.0 * hbar * self.tables.wnorm[i][m] * self.tables.lip[k] * ell * d;
            }
        }
        let trap = |stride: usize| -> Vec<f64> {
            let mut acc = vec![0.0; df];
            let mut m = 0;
            while m + 1 < len {
                let m2 = (m + stride).min(len - 1);
                let h2 = 0.5 * (t[i + m2] - t[i + m]);
                for c in 0..df {
                    acc[c] -= h2 * (wg[m * df + c] + wg[m2 * df + c]);
                }
                m = m2;
            }
            acc
        };
        let fine = trap(1);
        let coarse = trap(2);
        let richardson = dist(&fine, &coarse) / 3.0;

        let mut jc = vec![0.0; de];
        jc.copy_from_slice(&x[..de]);
        let mut tmp = vec![0.0; de];
        let mut next = vec![0.0; de];
        let mut j_err: f64 = 0.0;
        let mut m = 0;
        while m + 1 < len {
            let m2 = (m + 2).min(len - 1);
            let k = i + m;
            let h2 = 0.5 * (t[i + m2] - t[k]);
            for c in 0..de {
                tmp[c] = jc[c] + h2 * gx[m * de + c];
            }
            let step = if m2 == m + 2 { &self.tables.ue2[k * de * de..(k + 1) * de * de] } else { &self.tables.ue[k * de * de..(k + 1) * de * de] };
            matvec(step, de, &tmp, &mut next);
            for c in 0..de {
                next[c] += h2 * gx[m2 * de + c];
            }
            jc.copy_from_slice(&next);
            j_err = j_err.max(dist(&jc, &x[m2 * de..(m2 + 1) * de]) / (3.0 * self.tables.a[i][m2] * xi_norm));
            m = m2;
        }
        let x_err = inner_bound + j_err / (1.0 - 2.0 * self.alpha);
        let quad_rel = richardson / xi_norm + 2.0 * self.beta * x_err;
        Ok(NodeOutcome {
            phi: fine,
            quad_rel,
            clamp_rel: clamp / xi_norm,
            inner_bound,
            iterations,
            max_ratio: ratios.iter().copied().fold(0.0, f64::max),
        })
    }

    fn sweep(&self, graph: &ManifoldGraph) -> Result<(ManifoldGraph, Vec<NodeOutcome>, SweepStats)> {
        let n_xi = graph.n_xi();
        let outcomes = (0..graph.n_s() * n_xi)
            .into_par_iter()
            .map(|p| self.node(graph, p / n_xi, graph.xi_node(p / n_xi, p % n_xi).as_slice()))
            .collect::<Result<Vec<_>>>()?;
        let mut next = graph.clone();
        let mut stats = SweepStats::default();
        for (p, o) in outcomes.iter().enumerate() {
            next.value_mut(p / n_xi, p % n_xi).copy_from_slice(&o.phi);
            stats.inner_max_ratio = stats.inner_max_ratio.max(o.max_ratio);
            stats.inner_max_iterations = stats.inner_max_iterations.max(o.iterations);
            stats.inner_max_bound = stats.inner_max_bound.max(o.inner_bound);
        }
        Ok((next, outcomes, stats))
    }

    /// One application of the outer map: `(Φφ)(s_i, ξ_j)` at every node.
    pub fn apply_phi(&self, graph: &ManifoldGraph) -> Result<(ManifoldGraph, SweepStats)> {
        self.check_graph(graph)?;
        let (g, _, stats) = self.sweep(graph)?;
        Ok((g, stats))
    }

    fn check_graph(&self, graph: &ManifoldGraph) -> Result<()> {
        if graph.s_grid != self.tables.times || graph.xi_nodes != self.xi_nodes() || graph.dim_e != self.dim_e || graph.dim_f != self.dim_f {
            return Err(Error::Domain("graph does not live on this solver's grid".into()));
        }
        Ok(())
    }

    /// `max |second difference| / 8` per time node, relative to `‖ξ‖`, in `ξ` and in `s`.
    fn interpolation_rel(&self, graph: &ManifoldGraph) -> Vec<f64> {
        let n = graph.xi_nodes;
        let df = self.dim_f;
        let mut buf = vec![0.0; df];
        (0..graph.n_s())
            .map(|i| {
                let hx = 2.0 * graph.halfwidth[i] / (n - 1) as f64;
                let mut worst: f64 = 0.0;
                for j in 0..graph.n_xi() {
                    let idx = graph.xi_multi_index(j);
                    let scale = graph.xi_node(i, j).norm().max(hx);
                    let mut stride = 1;
                    for &ia in idx.iter().take(self.dim_e) {
                        if ia > 0 && ia + 1 < n {
                            let (l, c, r) = (graph.value(i, j - stride), graph.value(i, j), graph.value(i, j + stride));
                            let d2 = (0..df).map(|q| (l[q] - 2.0 * c[q] + r[q]).powi(2)).sum::<f64>().sqrt();
                            worst = worst.max(d2 / (8.0 * scale));
                        }
                        stride *= n;
                    }
                    if i > 0 && i + 1 < graph.n_s() {
                        let xi = graph.xi_node(i, j);
                        let (t0, t1, t2) = (graph.s_grid[i - 1], graph.s_grid[i], graph.s_grid[i + 1]);
                        let wl = (t2 - t1) / (t2 - t0);
                        graph.eval_at_node_clamped(i - 1, xi.as_slice(), &mut buf);
                        let left = buf.clone();
                        graph.eval_at_node_clamped(i + 1, xi.as_slice(), &mut buf);
                        let c = graph.value(i, j);
                        let d2 = (0..df).map(|q| (wl * left[q] + (1.0 - wl) * buf[q] - c[q]).powi(2)).sum::<f64>().sqrt();
                        worst = worst.max(d2 / (4.0 * scale));
                    }
                }
                worst
            })
            .collect()
    }

    /// Outer iteration from `φ ≡ 0` with a-posteriori error estimates.
    pub fn solve(&self) -> Result<Solution> {
        let q = self.q();
        let mut graph = self.zero_graph();
        let mut diag = SolveDiagnostics { q, horizon: self.horizon(), ..Default::default() };
        let mut last = None;
        for it in 1..=self.cfg.outer_max_iter {
            let (next, outcomes, stats) = self.sweep(&graph)?;
            let d = next.distance(&graph);
            if let Some(&prev) = diag.outer_distances.last() {
                if prev > 0.0 {
                    diag.outer_ratios.push(d / prev);
                }
            }
            diag.outer_distances.push(d);
            diag.sweeps.push(stats);
            graph = next;
            graph.outer_iterations = it;
            if d == 0.0 || d * q / (1.0 - q) < self.cfg.outer_tol {
                last = Some(outcomes);
                break;
            }
        }
        let Some(outcomes) = last else {
            return Err(Error::NonConvergence {
                what: "outer fixed point".into(),
                iterations: self.cfg.outer_max_iter,
                ratio: diag.outer_ratios.last().copied().unwrap_or(f64::NAN),
            });
        };
        let eta = 2.0 * self.beta * diag.sweeps.last().map_or(0.0, |s| s.inner_max_bound);
        let d_last = *diag.outer_distances.last().expect("at least one sweep");
        diag.outer_bound = (q * d_last + 2.0 * eta) / (1.0 - q);
        self.attach_errors(&mut graph, &outcomes, &mut diag);
        graph.metadata = serde_json::json!({ "diagnostics": &diag });
        Ok(Solution { graph, diagnostics: diag })
    }

    fn attach_errors(&self, graph: &mut ManifoldGraph, outcomes: &[NodeOutcome], diag: &mut SolveDiagnostics) {
        let n = graph.n_s();
        let n_xi = graph.n_xi();
        let t = &self.tables.times;
        let interp = self.interpolation_rel(graph);
        let mut local = vec![0.0; n];
        for i in 0..n {
            let (mut qm, mut cm): (f64, f64) = (0.0, 0.0);
            for o in &outcomes[i * n_xi..(i + 1) * n_xi] {
                qm = qm.max(o.quad_rel);
                cm = cm.max(o.clamp_rel);
            }
            local[i] = qm + cm + self.tables.tail_rel[i];
            if i < graph.active_len {
                diag.quadrature_max = diag.quadrature_max.max(qm);
                diag.clamp_max = diag.clamp_max.max(cm);
                diag.tail_residual = diag.tail_residual.max(self.tables.tail_rel[i]);
                diag.interpolation_max = diag.interpolation_max.max(interp[i]);
            }
        }
        // Errors in φ at later nodes feed back through the forcing term.
        let mut total = vec![0.0; n];
        for i in (0..n).rev() {
            let mut acc = local[i];
            for k in i + 1..n {
                let m = k - i;
                let hbar = 0.5 * (t[k] - t[k - 1] + if k + 1 < n { t[k + 1] - t[k] } else { 0.0 });
                let c = 2.0 * hbar * self.tables.wnorm[i][m] * self.tables.lip[k] * self.tables.a[i][m] / (1.0 - 2.0 * self.alpha);
                acc += c * (total[k] + interp[k]);
            }
            total[i] = acc;
        }
        let q = self.q();
        let root = (self.dim_e as f64).sqrt();
        for i in 0..n {
            let rel = diag.outer_bound + total[i] / (1.0 - q) + interp[i];
            graph.node_error[i] = rel * graph.halfwidth[i] * root;
        }
        graph.error_bound = graph.node_error[..graph.active_len].iter().copied().fold(0.0, f64::max);
    }
}

fn require_decay(report: &AdmissibilityReport) -> Result<()> {
    if report.decay.verdict != Verdict::Pass {
        return Err(Error::Precondition(format!("decay condition verdict is {}", report.decay.verdict.label())));
    }
    Ok(())
}

/// Global invariant graph for `f`, given the admissibility report of its envelope.
pub fn solve_manifold(
    system: &LinearSystem,
    bounds: &BoundFamily,
    f: &crate::perturbation::Perturbation,
    report: &AdmissibilityReport,
    cfg: &SolverConfig,
) -> Result<Solution> {
    let gate = check_global_gate(report.alpha, report.beta);
    if !gate.passed {
        return Err(Error::Precondition(format!(
            "global gate fails: 2α + max{{2β, √β}} = {:.6} (α = {}, β = {}, margin {:.6})",
            1.0 - gate.margin,
            report.alpha,
            report.beta,
            gate.margin
        )));
    }
    require_decay(report)?;
    let solver = ManifoldSolver::new(system, bounds, f, report.alpha, report.beta, BoxRule::Constant(cfg.xi_halfwidth), cfg.clone())?;
    solver.solve()
}

/// Graph for the truncated perturbation, valid on balls of radius `R`.
pub fn solve_local(
    system: &LinearSystem,
    bounds: &BoundFamily,
    f: &crate::perturbation::Perturbation,
    radius: &RadiusFunction,
    qcfg: &QuadratureConfig,
    decay: &DecayCheckConfig,
    cfg: &SolverConfig,
) -> Result<LocalSolution> {
    radius.validate()?;
    let ball = f.ball_envelope(radius).ok_or_else(|| Error::Precondition("perturbation has no Lipschitz bound on balls".into()))?;
    let report = assess(bounds, &ball, qcfg, decay)?;
    let gate = check_local_gate(report.alpha, report.beta);
    if !gate.passed {
        return Err(Error::Precondition(format!(
            "local gate fails: 4α + max{{4β, √(2β)}} = {:.6} (α = {}, β = {}, margin {:.6})",
            1.0 - gate.margin,
            report.alpha,
            report.beta,
            gate.margin
        )));
    }
    require_decay(&report)?;
    let (t, active) = time_grid(cfg, cfg.s_max + cfg.horizon_init);
    let s_factors = t[..active]
        .par_iter()
        .map(|&s| compute_s(bounds, radius, report.alpha, s, qcfg))
        .collect::<Result<Vec<_>>>()?;
    if let Some(bad) = s_factors.iter().find(|s| !s.is_finite()) {
        return Err(Error::Precondition(format!("S({}) is unbounded", bad.s)));
    }
    let truncated = f.truncate(radius);
    let solver = ManifoldSolver::new(
        system,
        bounds,
        &truncated,
        2.0 * report.alpha,
        2.0 * report.beta,
        BoxRule::Radius(radius.clone()),
        cfg.clone(),
    )?;
    let solution = solver.solve()?;
    let entry_radius = s_factors.iter().map(|s| radius.value(s.s) / (2.0 * s.value.expect("checked finite"))).collect();
    Ok(LocalSolution { solution, ball_alpha: report.alpha, ball_beta: report.beta, local_margin: gate.margin, s_factors, entry_radius })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perturbation::Perturbation;

    fn exp_bounds() -> BoundFamily {
        BoundFamily::Exponential { d: 1.0, a: -1.0, b: 0.0, eps: 0.1 }
    }

    fn exp_system() -> LinearSystem {
        let pf = exp_bounds().as_product_form().unwrap();
        LinearSystem::build_product_example(pf.frak_a, pf.frak_b, pf.frak_c, pf.frak_d).unwrap()
    }

    fn tanh_f() -> Perturbation {
        Perturbation::tanh_cross(LipschitzEnvelope::ExpDecay { delta: 0.01, rate: 0.2 })
    }

    const ALPHA: f64 = 0.1;
    const BETA: f64 = 0.01 / 1.1;

    fn small_cfg() -> SolverConfig {
        SolverConfig { s_max: 4.0, active_nodes: 49, tail_nodes: 40, xi_nodes: 9, ..Default::default() }
    }

    #[test]
    fn zero_perturbation_gives_zero_graph_in_one_sweep() {
        let sys = exp_system();
        let f = Perturbation::zero();
        let solver = ManifoldSolver::new(&sys, &exp_bounds(), &f, 0.0, 0.0, BoxRule::Constant(1.0), small_cfg()).unwrap();
        let sol = solver.solve().unwrap();
        assert_eq!(sol.graph.outer_iterations, 1);
        assert!(sol.graph.values.iter().all(|&v| v == 0.0));
        let x = solver.solve_inner(&sol.graph, 3, &[0.7]).unwrap();
        assert_eq!(x.iterations, 1);
        let seed = solver.seed_trajectory(3, &[0.7]).unwrap();
        assert_eq!(x.samples, seed.samples);
    }

    #[test]
    fn inner_seed_starts_at_xi_and_zero_stays_zero() {
        let sys = exp_system();
        let f = tanh_f();
        let solver = ManifoldSolver::new(&sys, &exp_bounds(), &f, ALPHA, BETA, BoxRule::Constant(1.0), small_cfg()).unwrap();
        let g = solver.zero_graph();
        let x = solver.solve_inner(&g, 5, &[0.4]).unwrap();
        assert_eq!(x.samples[0], vec![0.4]);
        let z = solver.solve_inner(&g, 5, &[0.0]).unwrap();
        assert!(z.samples.iter().all(|v| v[0] == 0.0));
        assert!(x.weighted_norm <= 1.0 / (1.0 - 2.0 * ALPHA) + 1e-8);
    }

    #[test]
    fn exponential_scenario_contracts_at_the_predicted_rates() {
        let sys = exp_system();
        let f = tanh_f();
        let solver = ManifoldSolver::new(&sys, &exp_bounds(), &f, ALPHA, BETA, BoxRule::Constant(1.0), small_cfg()).unwrap();
        let sol = solver.solve().unwrap();
        let q = BETA / (1.0 - 2.0 * ALPHA).powi(2);
        for r in &sol.diagnostics.outer_ratios {
            assert!(*r <= q + 0.05, "outer ratio {r}");
        }
        for s in &sol.diagnostics.sweeps {
            assert!(s.inner_max_ratio <= 2.0 * ALPHA + 0.05, "inner ratio {}", s.inner_max_ratio);
        }
        let g = &sol.graph;
        assert!(g.zero_at_origin());
        let lip = g.lipschitz_constants().into_iter().fold(0.0, f64::max);
        assert!(lip <= 2.0 * BETA / (1.0 - 2.0 * ALPHA) + 1e-9, "lip {lip}");
        assert!(g.error_bound > 0.0 && g.error_bound < 1e-4, "bound {}", g.error_bound);
        assert!(sol.graph.outer_iterations <= 10);
    }

    #[test]
    fn time_grid_is_uniform_then_geometric() {
        let cfg = small_cfg();
        let (t, active) = time_grid(&cfg, 50.0);
        assert_eq!(active, 49);
        assert!((t[48] - 4.0).abs() < 1e-15);
        assert_eq!(*t.last().unwrap(), 50.0);
        let h = t[1] - t[0];
        assert!((t[49] - t[48] - h).abs() < 1e-12);
        let r1 = (t[51] - t[50]) / (t[50] - t[49]);
        let r2 = (t[80] - t[79]) / (t[79] - t[78]);
        assert!((r1 - r2).abs() < 1e-9 && r1 > 1.0);
        let (tr, ar) = time_grid(&SolverConfig { refine: 1, ..cfg }, 50.0);
        assert_eq!(ar, 97);
        assert_eq!(tr.len(), 2 * t.len() - 1);
        assert!(t.iter().enumerate().all(|(k, v)| tr[2 * k] == *v));
    }

    #[test]
    fn gate_failure_is_a_precondition_error() {
        let sys = exp_system();
        let f = tanh_f();
        let err = ManifoldSolver::new(&sys, &exp_bounds(), &f, 0.5, 0.01, BoxRule::Constant(1.0), small_cfg()).err().unwrap();
        assert!(matches!(err, Error::Precondition(_)));
    }
}
