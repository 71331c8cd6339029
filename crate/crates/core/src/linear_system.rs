//! The linear equation `v' = A(t) v`, its evolution operator and the invariant splitting.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, RwLock};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functions::ScalarFn;
use crate::ode::{dopri5, IntegratorConfig, DIVERGENCE_GUARD};

/// Constant projection `P` onto `E` along `F`, with orthonormal bases of both.
#[derive(Clone, Debug, PartialEq)]
pub struct Splitting {
    dim_e: usize,
    dim_f: usize,
    projection: DMatrix<f64>,
    basis_e: DMatrix<f64>,
    basis_f: DMatrix<f64>,
    coordinate: bool,
}

impl Splitting {
    /// Splitting from an arbitrary (not necessarily orthogonal) projection matrix.
    pub fn new(projection: DMatrix<f64>) -> Result<Self> {
        let n = projection.nrows();
        if n == 0 || projection.ncols() != n {
            return Err(Error::Constraint("projection must be a nonempty square matrix".into()));
        }
        let sq = &projection * &projection;
        let defect = (&sq - &projection).amax();
        if defect > 1e-12 {
            return Err(Error::Constraint(format!("projection is not idempotent (defect {defect:e})")));
        }
        let complement = DMatrix::identity(n, n) - &projection;
        let basis_e = range_basis(&projection);
        let basis_f = range_basis(&complement);
        let (dim_e, dim_f) = (basis_e.ncols(), basis_f.ncols());
        if dim_e == 0 || dim_f == 0 || dim_e + dim_f != n {
            return Err(Error::Constraint(format!(
                "rank(P) = {dim_e} and rank(I-P) = {dim_f} do not split dimension {n} into nonzero parts"
            )));
        }
        Ok(Splitting { dim_e, dim_f, projection, basis_e, basis_f, coordinate: false })
    }

    /// `E` spanned by the first `dim_e` coordinates, `F` by the rest.
    pub fn coordinate(dim_e: usize, dim_f: usize) -> Self {
        assert!(dim_e > 0 && dim_f > 0, "both factors must be nontrivial");
        let n = dim_e + dim_f;
        let projection = DMatrix::from_fn(n, n, |i, j| if i == j && i < dim_e { 1.0 } else { 0.0 });
        let basis_e = DMatrix::from_fn(n, dim_e, |i, j| if i == j { 1.0 } else { 0.0 });
        let basis_f = DMatrix::from_fn(n, dim_f, |i, j| if i == j + dim_e { 1.0 } else { 0.0 });
        Splitting { dim_e, dim_f, projection, basis_e, basis_f, coordinate: true }
    }

    pub fn dim(&self) -> usize {
        self.dim_e + self.dim_f
    }

    pub fn dim_e(&self) -> usize {
        self.dim_e
    }

    pub fn dim_f(&self) -> usize {
        self.dim_f
    }

    pub fn projection(&self) -> &DMatrix<f64> {
        &self.projection
    }

    pub fn basis_e(&self) -> &DMatrix<f64> {
        &self.basis_e
    }

    pub fn basis_f(&self) -> &DMatrix<f64> {
        &self.basis_f
    }

    /// Coordinates of `P v` in the `E` basis.
    pub fn e_coords(&self, v: &DVector<f64>) -> DVector<f64> {
        if self.coordinate {
            return v.rows(0, self.dim_e).into_owned();
        }
        self.basis_e.transpose() * (&self.projection * v)
    }

    /// Coordinates of `(I - P) v` in the `F` basis.
    pub fn f_coords(&self, v: &DVector<f64>) -> DVector<f64> {
        if self.coordinate {
            return v.rows(self.dim_e, self.dim_f).into_owned();
        }
        self.basis_f.transpose() * (v - &self.projection * v)
    }

    pub fn join(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        if self.coordinate {
            let mut v = DVector::zeros(self.dim());
            v.rows_mut(0, self.dim_e).copy_from(x);
            v.rows_mut(self.dim_e, self.dim_f).copy_from(y);
            return v;
        }
        &self.basis_e * x + &self.basis_f * y
    }

    /// Product norm `‖Pv‖ + ‖(I-P)v‖`.
    pub fn norm(&self, v: &DVector<f64>) -> f64 {
        self.e_coords(v).norm() + self.f_coords(v).norm()
    }
}

fn range_basis(m: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let cols: Vec<usize> = (0..svd.singular_values.len()).filter(|&i| svd.singular_values[i] > 0.5).collect();
    DMatrix::from_fn(m.nrows(), cols.len(), |i, j| u[(i, cols[j])])
}

/// Built-in and user-supplied coefficient maps `t -> A(t)`.
#[derive(Clone)]
pub enum CoefficientFamily {
    Diagonal { rates: Vec<f64> },
    /// The coefficient matrix whose flow is the closed-form product system.
    Product { frak_a: ScalarFn, frak_b: ScalarFn, frak_c: ScalarFn, frak_d: ScalarFn },
    Custom(Arc<dyn Fn(f64) -> DMatrix<f64> + Send + Sync>),
}

impl fmt::Debug for CoefficientFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoefficientFamily::Diagonal { rates } => f.debug_struct("Diagonal").field("rates", rates).finish(),
            CoefficientFamily::Product { frak_a, frak_b, frak_c, frak_d } => f
                .debug_struct("Product")
                .field("frak_a", frak_a)
                .field("frak_b", frak_b)
                .field("frak_c", frak_c)
                .field("frak_d", frak_d)
                .finish(),
            CoefficientFamily::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

#[derive(Clone, Debug)]
pub enum SystemKind {
    ClosedFormProduct { frak_a: ScalarFn, frak_b: ScalarFn, frak_c: ScalarFn, frak_d: ScalarFn },
    Coefficient { family: CoefficientFamily, integrator: IntegratorConfig },
}

#[derive(Default)]
struct StepCache {
    steps: RwLock<HashMap<i64, Arc<DMatrix<f64>>>>,
}

#[derive(Clone)]
pub struct LinearSystem {
    splitting: Splitting,
    kind: SystemKind,
    cache: Arc<StepCache>,
}

impl fmt::Debug for LinearSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LinearSystem").field("splitting", &self.splitting).field("kind", &self.kind).finish()
    }
}

/// Diagonal rates of the product-example coefficient matrix.
fn product_rates(fa: &ScalarFn, fb: &ScalarFn, fc: &ScalarFn, fd: &ScalarFn, t: f64) -> (f64, f64) {
    let osc = 0.5 * (t.cos() - 1.0);
    let half_sin = 0.5 * t.sin();
    let u = -fa.log_derivative(t) + fc.log_derivative(t) * osc - fc.ln_value(t) * half_sin;
    let v = fb.log_derivative(t) + fd.log_derivative(t) * osc - fd.ln_value(t) * half_sin;
    (u, v)
}

const CONSTRAINT_SAMPLES: usize = 48;

fn check_at_least_one(name: &str, f: &ScalarFn) -> Result<()> {
    if !(f.scale > 0.0) {
        return Err(Error::Constraint(format!("{name} must be positive")));
    }
    for k in 0..CONSTRAINT_SAMPLES {
        let t = if k == 0 { 0.0 } else { 1e-2 * 1.4f64.powi(k as i32) };
        if f.ln_value(t) < -1e-12 {
            return Err(Error::Constraint(format!("{name}({t}) = {} is below 1", f.value(t))));
        }
    }
    Ok(())
}

impl LinearSystem {
    /// Planar system with closed-form evolution built from four positive scalar functions.
    pub fn build_product_example(frak_a: ScalarFn, frak_b: ScalarFn, frak_c: ScalarFn, frak_d: ScalarFn) -> Result<Self> {
        for (name, f) in [("frak_a", &frak_a), ("frak_b", &frak_b)] {
            if !(f.scale > 0.0) {
                return Err(Error::Constraint(format!("{name} must be positive")));
            }
        }
        check_at_least_one("frak_c", &frak_c)?;
        check_at_least_one("frak_d", &frak_d)?;
        Ok(LinearSystem {
            splitting: Splitting::coordinate(1, 1),
            kind: SystemKind::ClosedFormProduct { frak_a, frak_b, frak_c, frak_d },
            cache: Arc::default(),
        })
    }

    /// The same planar system, but evolved by numerical integration of its coefficient matrix.
    pub fn product_coefficient(
        frak_a: ScalarFn,
        frak_b: ScalarFn,
        frak_c: ScalarFn,
        frak_d: ScalarFn,
        integrator: IntegratorConfig,
    ) -> Result<Self> {
        check_at_least_one("frak_c", &frak_c)?;
        check_at_least_one("frak_d", &frak_d)?;
        Ok(Self::coefficient(
            CoefficientFamily::Product { frak_a, frak_b, frak_c, frak_d },
            Splitting::coordinate(1, 1),
            integrator,
        ))
    }

    pub fn diagonal(rates: Vec<f64>, dim_e: usize, integrator: IntegratorConfig) -> Result<Self> {
        if dim_e == 0 || dim_e >= rates.len() {
            return Err(Error::Constraint(format!("dim_e = {dim_e} must lie in 1..{}", rates.len())));
        }
        let splitting = Splitting::coordinate(dim_e, rates.len() - dim_e);
        Ok(Self::coefficient(CoefficientFamily::Diagonal { rates }, splitting, integrator))
    }

    pub fn coefficient(family: CoefficientFamily, splitting: Splitting, integrator: IntegratorConfig) -> Self {
        LinearSystem { splitting, kind: SystemKind::Coefficient { family, integrator }, cache: Arc::default() }
    }

    pub fn dim(&self) -> usize {
        self.splitting.dim()
    }

    pub fn splitting(&self) -> &Splitting {
        &self.splitting
    }

    pub fn kind(&self) -> &SystemKind {
        &self.kind
    }

    pub fn is_closed_form(&self) -> bool {
        matches!(self.kind, SystemKind::ClosedFormProduct { .. })
    }

    /// `A(t)`.
    pub fn coefficient_matrix(&self, t: f64) -> DMatrix<f64> {
        match &self.kind {
            SystemKind::ClosedFormProduct { frak_a, frak_b, frak_c, frak_d } => {
                let (u, v) = product_rates(frak_a, frak_b, frak_c, frak_d, t);
                DMatrix::from_diagonal(&DVector::from_vec(vec![u, v]))
            }
            SystemKind::Coefficient { family, .. } => match family {
                CoefficientFamily::Diagonal { rates } => DMatrix::from_diagonal(&DVector::from_column_slice(rates)),
                CoefficientFamily::Product { frak_a, frak_b, frak_c, frak_d } => {
                    let (u, v) = product_rates(frak_a, frak_b, frak_c, frak_d, t);
                    DMatrix::from_diagonal(&DVector::from_vec(vec![u, v]))
                }
                CoefficientFamily::Custom(a) => a(t),
            },
        }
    }

    /// Closed-form scalar factors `(U(t,s), V(t,s))` of the product system.
    pub fn product_factors(&self, t: f64, s: f64) -> Result<(f64, f64)> {
        let SystemKind::ClosedFormProduct { frak_a, frak_b, frak_c, frak_d } = &self.kind else {
            return Err(Error::Domain("closed-form factors requested for a coefficient system".into()));
        };
        check_order(t, s)?;
        let osc = |x: f64| 0.5 * (x.cos() - 1.0);
        let ln_u = frak_a.ln_value(s) - frak_a.ln_value(t) + osc(t) * frak_c.ln_value(t) - osc(s) * frak_c.ln_value(s);
        let ln_v = frak_b.ln_value(t) - frak_b.ln_value(s) + osc(t) * frak_d.ln_value(t) - osc(s) * frak_d.ln_value(s);
        let (u, v) = (ln_u.exp(), ln_v.exp());
        for x in [u, v] {
            if !x.is_finite() || x > DIVERGENCE_GUARD {
                return Err(Error::Divergence { horizon: t, what: format!("evolution factor {x:e}") });
            }
        }
        Ok((u, v))
    }

    /// The evolution operator `T_{t,s}` as a matrix.
    pub fn transition(&self, t: f64, s: f64) -> Result<DMatrix<f64>> {
        check_order(t, s)?;
        let n = self.dim();
        if t == s {
            return Ok(DMatrix::identity(n, n));
        }
        match &self.kind {
            SystemKind::ClosedFormProduct { .. } => {
                let (u, v) = self.product_factors(t, s)?;
                Ok(DMatrix::from_diagonal(&DVector::from_vec(vec![u, v])))
            }
            SystemKind::Coefficient { integrator, .. } => self.composed_transition(t, s, integrator),
        }
    }

    fn composed_transition(&self, t: f64, s: f64, cfg: &IntegratorConfig) -> Result<DMatrix<f64>> {
        let h = cfg.cache_step;
        let i0 = (s / h).ceil() as i64;
        let i1 = (t / h).floor() as i64;
        if i0 >= i1 {
            return self.integrate_matrix(t, s, cfg);
        }
        let mut m = self.integrate_matrix(i0 as f64 * h, s, cfg)?;
        for k in i0..i1 {
            m = self.cached_step(k, cfg)?.as_ref() * m;
            if m.amax() > DIVERGENCE_GUARD {
                return Err(Error::Divergence { horizon: (k + 1) as f64 * h, what: "transition matrix".into() });
            }
        }
        let tail = self.integrate_matrix(t, i1 as f64 * h, cfg)?;
        let m = tail * m;
        if m.amax() > DIVERGENCE_GUARD || !m.iter().all(|x| x.is_finite()) {
            return Err(Error::Divergence { horizon: t, what: "transition matrix".into() });
        }
        Ok(m)
    }

    fn cached_step(&self, k: i64, cfg: &IntegratorConfig) -> Result<Arc<DMatrix<f64>>> {
        if let Some(m) = self.cache.steps.read().expect("step cache poisoned").get(&k) {
            return Ok(Arc::clone(m));
        }
        let h = cfg.cache_step;
        let m = Arc::new(self.integrate_matrix((k + 1) as f64 * h, k as f64 * h, cfg)?);
        let mut guard = self.cache.steps.write().expect("step cache poisoned");
        Ok(Arc::clone(guard.entry(k).or_insert(m)))
    }

    fn integrate_matrix(&self, t: f64, s: f64, cfg: &IntegratorConfig) -> Result<DMatrix<f64>> {
        let n = self.dim();
        if t == s {
            return Ok(DMatrix::identity(n, n));
        }
        let y0 = DVector::from_column_slice(DMatrix::<f64>::identity(n, n).as_slice());
        let rhs = |r: f64, y: &DVector<f64>| {
            let phi = DMatrix::from_column_slice(n, n, y.as_slice());
            let d = self.coefficient_matrix(r) * phi;
            DVector::from_column_slice(d.as_slice())
        };
        let (y, _) = dopri5(rhs, s, &y0, t, cfg)?;
        Ok(DMatrix::from_column_slice(n, n, y.as_slice()))
    }

    /// `T_{t,s} v`.
    pub fn evolve(&self, t: f64, s: f64, v: &DVector<f64>) -> Result<DVector<f64>> {
        if v.len() != self.dim() {
            return Err(Error::Domain(format!("state has length {}, expected {}", v.len(), self.dim())));
        }
        if t == s {
            check_order(t, s)?;
            return Ok(v.clone());
        }
        Ok(self.transition(t, s)? * v)
    }

    /// Blocks of `T_{t,s}` restricted to `E` and `F`, in basis coordinates.
    pub fn restricted(&self, t: f64, s: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let m = self.transition(t, s)?;
        let (be, bf) = (self.splitting.basis_e(), self.splitting.basis_f());
        if self.splitting.coordinate {
            let (de, df) = (self.splitting.dim_e, self.splitting.dim_f);
            return Ok((m.view((0, 0), (de, de)).into_owned(), m.view((de, de), (df, df)).into_owned()));
        }
        let pe = self.splitting.projection() * &m * be;
        let qf = &m * bf - self.splitting.projection() * &m * bf;
        Ok((be.transpose() * pe, bf.transpose() * qf))
    }

    /// Inverse of the `F`-block of `T_{t,s}` in `F` coordinates.
    pub fn inverse_f_block(&self, t: f64, s: f64) -> Result<DMatrix<f64>> {
        let (_, v) = self.restricted(t, s)?;
        invert_checked(v, t, s)
    }

    /// `(T_{t,s}|_F)^{-1} (I - P) w` as an ambient vector.
    pub fn evolve_inverse_f(&self, t: f64, s: f64, w: &DVector<f64>) -> Result<DVector<f64>> {
        if w.len() != self.dim() {
            return Err(Error::Domain(format!("state has length {}, expected {}", w.len(), self.dim())));
        }
        let inv = self.inverse_f_block(t, s)?;
        let y = inv * self.splitting.f_coords(w);
        Ok(self.splitting.join(&DVector::zeros(self.splitting.dim_e), &y))
    }

    /// Worst relative cocycle defect `‖T_{t,r} T_{r,s} v − T_{t,s} v‖ / ‖v‖` over coordinate unit vectors.
    pub fn check_cocycle(&self, triples: &[(f64, f64, f64)], tol: f64) -> Result<CocycleReport> {
        let mut worst: f64 = 0.0;
        let mut worst_triple = None;
        for &(t, r, s) in triples {
            if !(t >= r && r >= s) {
                return Err(Error::Domain(format!("triple ({t}, {r}, {s}) is not ordered")));
            }
            let lhs = self.transition(t, r)? * self.transition(r, s)?;
            let rhs = self.transition(t, s)?;
            for j in 0..self.dim() {
                let d = self.splitting.norm(&(lhs.column(j) - rhs.column(j)).into_owned());
                let e = DVector::from_fn(self.dim(), |i, _| if i == j { 1.0 } else { 0.0 });
                let rel = d / self.splitting.norm(&e);
                if rel > worst {
                    worst = rel;
                    worst_triple = Some((t, r, s));
                }
            }
        }
        Ok(CocycleReport { worst, worst_triple, tol, passed: worst <= tol })
    }

    /// Worst `‖T P v − P T v‖ / ‖v‖` over coordinate unit vectors at the given pairs.
    pub fn check_commutation(&self, pairs: &[(f64, f64)]) -> Result<f64> {
        let p = self.splitting.projection();
        let mut worst: f64 = 0.0;
        for &(t, s) in pairs {
            let m = self.transition(t, s)?;
            let d = &m * p - p * &m;
            for j in 0..self.dim() {
                worst = worst.max(d.column(j).norm());
            }
        }
        Ok(worst)
    }
}

fn check_order(t: f64, s: f64) -> Result<()> {
    if !(t >= s && s >= 0.0) {
        return Err(Error::Domain(format!("need t >= s >= 0, got t = {t}, s = {s}")));
    }
    Ok(())
}

fn invert_checked(v: DMatrix<f64>, t: f64, s: f64) -> Result<DMatrix<f64>> {
    let sv = v.singular_values();
    let (lo, hi) = sv.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    if !(lo > 1e-13 * hi.max(1e-300)) {
        return Err(Error::Invertibility { t, s, sigma_min: lo });
    }
    v.try_inverse().ok_or(Error::Invertibility { t, s, sigma_min: lo })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CocycleReport {
    pub worst: f64,
    pub worst_triple: Option<(f64, f64, f64)>,
    pub tol: f64,
    pub passed: bool,
}
