//! Nonlinear perturbations `f(t, v)` in split coordinates `v = (x, y)`, `x ∈ E`, `y ∈ F`.

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::admissibility::{LipschitzEnvelope, RadiusFunction};
use crate::error::{Error, Result};
use crate::linear_system::Splitting;

pub type CustomMap = Arc<dyn Fn(f64, &DVector<f64>, &DVector<f64>) -> (DVector<f64>, DVector<f64>) + Send + Sync>;

#[derive(Clone)]
pub enum PerturbationKind {
    Zero,
    /// `env(t) (tanh y, tanh x)`, componentwise; needs `dim E = dim F`.
    TanhCross,
    /// `c/(1+q) (y‖y‖^q, x‖x‖^q)`; needs `dim E = dim F`.
    PowerCross { c: f64, q: f64 },
    /// Returns the `E` and `F` coordinates of `f(t, (x, y))`.
    Custom(CustomMap),
}

impl fmt::Debug for PerturbationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PerturbationKind::Zero => f.write_str("Zero"),
            PerturbationKind::TanhCross => f.write_str("TanhCross"),
            PerturbationKind::PowerCross { c, q } => f.debug_struct("PowerCross").field("c", c).field("q", q).finish(),
            PerturbationKind::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

/// Constants of `‖f(r,u) − f(r,v)‖ ≤ c ‖u−v‖ (‖u‖+‖v‖)^q`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalForm {
    pub c: f64,
    pub q: f64,
}

#[derive(Clone, Debug)]
pub struct Perturbation {
    kind: PerturbationKind,
    envelope: Option<LipschitzEnvelope>,
    local_form: Option<LocalForm>,
    truncation: Option<RadiusFunction>,
}

impl Perturbation {
    pub fn zero() -> Self {
        Perturbation { kind: PerturbationKind::Zero, envelope: Some(LipschitzEnvelope::Zero), local_form: None, truncation: None }
    }

    pub fn tanh_cross(envelope: LipschitzEnvelope) -> Self {
        Perturbation { kind: PerturbationKind::TanhCross, envelope: Some(envelope), local_form: None, truncation: None }
    }

    /// Locally Lipschitz cross-coupled power map; it has no global envelope.
    pub fn power_cross(c: f64, q: f64) -> Self {
        Perturbation {
            kind: PerturbationKind::PowerCross { c, q },
            envelope: None,
            local_form: Some(LocalForm { c, q }),
            truncation: None,
        }
    }

    pub fn custom(map: CustomMap, envelope: Option<LipschitzEnvelope>, local_form: Option<LocalForm>) -> Self {
        Perturbation { kind: PerturbationKind::Custom(map), envelope, local_form, truncation: None }
    }

    pub fn kind(&self) -> &PerturbationKind {
        &self.kind
    }

    pub fn envelope(&self) -> Option<&LipschitzEnvelope> {
        self.envelope.as_ref()
    }

    pub fn local_form(&self) -> Option<LocalForm> {
        self.local_form
    }

    pub fn truncation(&self) -> Option<&RadiusFunction> {
        self.truncation.as_ref()
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.kind, PerturbationKind::Zero)
    }

    pub fn check_dims(&self, dim_e: usize, dim_f: usize) -> Result<()> {
        match self.kind {
            PerturbationKind::TanhCross | PerturbationKind::PowerCross { .. } if dim_e != dim_f => {
                Err(Error::Constraint(format!("cross-coupled perturbation needs dim E = dim F, got {dim_e} and {dim_f}")))
            }
            _ => Ok(()),
        }
    }

    /// Writes the `E` and `F` coordinates of `f(t, (x, y))` into `fx`, `fy`.
    pub fn eval_into(&self, t: f64, x: &[f64], y: &[f64], fx: &mut [f64], fy: &mut [f64]) {
        let mut scale = 1.0;
        if let Some(r) = &self.truncation {
            let n = norm2(x) + norm2(y);
            let rt = r.value(t);
            if n > rt {
                scale = rt / n;
            }
        }
        match &self.kind {
            PerturbationKind::Zero => {
                fx.fill(0.0);
                fy.fill(0.0);
            }
            PerturbationKind::TanhCross => {
                let env = self.envelope.as_ref().map_or(0.0, |e| e.value(t));
                for (o, &v) in fx.iter_mut().zip(y) {
                    *o = env * (scale * v).tanh();
                }
                for (o, &v) in fy.iter_mut().zip(x) {
                    *o = env * (scale * v).tanh();
                }
            }
            PerturbationKind::PowerCross { c, q } => {
                let k = c / (1.0 + q);
                let ny = (scale * norm2(y)).powf(*q);
                let nx = (scale * norm2(x)).powf(*q);
                for (o, &v) in fx.iter_mut().zip(y) {
                    *o = k * scale * v * ny;
                }
                for (o, &v) in fy.iter_mut().zip(x) {
                    *o = k * scale * v * nx;
                }
            }
            PerturbationKind::Custom(map) => {
                let xs = DVector::from_iterator(x.len(), x.iter().map(|v| v * scale));
                let ys = DVector::from_iterator(y.len(), y.iter().map(|v| v * scale));
                let (a, b) = map(t, &xs, &ys);
                fx.copy_from_slice(a.as_slice());
                fy.copy_from_slice(b.as_slice());
            }
        }
    }

    pub fn eval(&self, t: f64, x: &DVector<f64>, y: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let mut fx = DVector::zeros(x.len());
        let mut fy = DVector::zeros(y.len());
        self.eval_into(t, x.as_slice(), y.as_slice(), fx.as_mut_slice(), fy.as_mut_slice());
        (fx, fy)
    }

    /// `f(t, v)` for an ambient state.
    pub fn eval_ambient(&self, splitting: &Splitting, t: f64, v: &DVector<f64>) -> DVector<f64> {
        let (x, y) = (splitting.e_coords(v), splitting.f_coords(v));
        let (fx, fy) = self.eval(t, &x, &y);
        splitting.join(&fx, &fy)
    }

    /// Radial clamp outside `B(R(r))`, with envelope `2 Lip(f_r|B(R(r)))`.
    pub fn truncate(&self, radius: &RadiusFunction) -> Perturbation {
        let envelope = match (self.local_form, &self.envelope) {
            (Some(LocalForm { c, q }), _) => Some(LipschitzEnvelope::Scaled {
                factor: 2.0,
                inner: Box::new(LipschitzEnvelope::BallPower { c, q, radius: radius.clone() }),
            }),
            (None, Some(e)) => Some(LipschitzEnvelope::Scaled { factor: 2.0, inner: Box::new(e.clone()) }),
            (None, None) => None,
        };
        Perturbation { kind: self.kind.clone(), envelope, local_form: self.local_form, truncation: Some(radius.clone()) }
    }

    /// Envelope bounding `Lip(f_r|B(R(r)))` before truncation.
    pub fn ball_envelope(&self, radius: &RadiusFunction) -> Option<LipschitzEnvelope> {
        match (self.local_form, &self.envelope) {
            (Some(LocalForm { c, q }), _) => Some(LipschitzEnvelope::BallPower { c, q, radius: radius.clone() }),
            (None, e) => e.clone(),
        }
    }
}

pub(crate) fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct QuotientReport {
    pub samples: usize,
    /// Largest `‖f(t,u)−f(t,v)‖ / (‖u−v‖ · bound(t))` seen.
    pub worst_ratio: f64,
    /// Largest `‖f(t,0)‖`.
    pub worst_at_zero: f64,
}

fn random_state<R: Rng>(rng: &mut R, de: usize, df: usize, scale: f64) -> (DVector<f64>, DVector<f64>) {
    let x = DVector::from_fn(de, |_, _| rng.random_range(-scale..scale));
    let y = DVector::from_fn(df, |_, _| rng.random_range(-scale..scale));
    (x, y)
}

fn pnorm(x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    x.norm() + y.norm()
}

/// Samples difference quotients of `f` against `bound(t)` for states of size up to `scale(t)`.
pub fn sample_quotients<R: Rng>(
    f: &Perturbation,
    dims: (usize, usize),
    times: &[f64],
    pairs_per_time: usize,
    scale: impl Fn(f64) -> f64,
    bound: impl Fn(f64) -> f64,
    rng: &mut R,
) -> QuotientReport {
    let (de, df) = dims;
    let mut rep = QuotientReport::default();
    for &t in times {
        let (z0, z1) = f.eval(t, &DVector::zeros(de), &DVector::zeros(df));
        rep.worst_at_zero = rep.worst_at_zero.max(pnorm(&z0, &z1));
        for _ in 0..pairs_per_time {
            let (ux, uy) = random_state(rng, de, df, scale(t));
            let (vx, vy) = random_state(rng, de, df, scale(t));
            let d = pnorm(&(&ux - &vx), &(&uy - &vy));
            if d == 0.0 {
                continue;
            }
            let (fux, fuy) = f.eval(t, &ux, &uy);
            let (fvx, fvy) = f.eval(t, &vx, &vy);
            let q = pnorm(&(fux - fvx), &(fuy - fvy)) / d;
            rep.worst_ratio = rep.worst_ratio.max(q / bound(t));
            rep.samples += 1;
        }
    }
    rep
}

/// Samples `‖f(r,u)−f(r,v)‖ / (c ‖u−v‖ (‖u‖+‖v‖)^q)`.
pub fn sample_local_form<R: Rng>(f: &Perturbation, dims: (usize, usize), times: &[f64], pairs: usize, scale: f64, rng: &mut R) -> f64 {
    let Some(LocalForm { c, q }) = f.local_form() else { return 0.0 };
    let (de, df) = dims;
    let mut worst: f64 = 0.0;
    for &t in times {
        for _ in 0..pairs {
            let (ux, uy) = random_state(rng, de, df, scale);
            let (vx, vy) = random_state(rng, de, df, scale);
            let d = pnorm(&(&ux - &vx), &(&uy - &vy));
            let (fux, fuy) = f.eval(t, &ux, &uy);
            let (fvx, fvy) = f.eval(t, &vx, &vy);
            let rhs = c * d * (pnorm(&ux, &uy) + pnorm(&vx, &vy)).powf(q);
            if rhs > 0.0 {
                worst = worst.max(pnorm(&(fux - fvx), &(fuy - fvy)) / rhs);
            }
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn vanishes_at_origin() {
        let f = Perturbation::tanh_cross(LipschitzEnvelope::ExpDecay { delta: 0.5, rate: 0.1 });
        let (a, b) = f.eval(1.0, &v(&[0.0]), &v(&[0.0]));
        assert_eq!((a[0], b[0]), (0.0, 0.0));
    }

    #[test]
    fn tanh_cross_respects_envelope() {
        let env = LipschitzEnvelope::ExpDecay { delta: 0.5, rate: 0.1 };
        let f = Perturbation::tanh_cross(env.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rep = sample_quotients(&f, (2, 2), &[0.0, 1.0, 4.0], 200, |_| 3.0, |t| env.value(t), &mut rng);
        assert!(rep.worst_ratio <= 1.0 + 1e-12, "{rep:?}");
    }

    #[test]
    fn clamp_halves_double_radius_points() {
        let r = RadiusFunction::Constant { rho0: 0.5 };
        let f = Perturbation::power_cross(1.0, 2.0);
        let ft = f.truncate(&r);
        let (x, y) = (v(&[0.6]), v(&[-0.4]));
        let (a, b) = ft.eval(0.0, &x, &y);
        let (a2, b2) = f.eval(0.0, &(&x * 0.5), &(&y * 0.5));
        assert!((a - a2).amax() < 1e-15 && (b - b2).amax() < 1e-15);
        let inside = (v(&[0.1]), v(&[0.2]));
        assert_eq!(ft.eval(0.0, &inside.0, &inside.1), f.eval(0.0, &inside.0, &inside.1));
    }

    #[test]
    fn power_cross_satisfies_local_form() {
        let f = Perturbation::power_cross(1.0, 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        assert!(sample_local_form(&f, (1, 1), &[0.0], 500, 2.0, &mut rng) <= 1.0 + 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let f = Perturbation::tanh_cross(LipschitzEnvelope::Zero);
        assert!(f.check_dims(1, 2).is_err());
        assert!(f.check_dims(2, 2).is_ok());
    }
}
