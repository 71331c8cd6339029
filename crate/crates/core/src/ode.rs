//! Adaptive Dormand–Prince 5(4) integrator.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Magnitude beyond which a trajectory is treated as divergent.
pub const DIVERGENCE_GUARD: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorConfig {
    pub rtol: f64,
    pub atol: f64,
    pub h_init: f64,
    pub h_min: f64,
    pub max_steps: usize,
    /// Spacing of the cached step propagators for coefficient systems.
    pub cache_step: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            rtol: 1e-11,
            atol: 1e-13,
            h_init: 1e-2,
            h_min: 1e-13,
            max_steps: 2_000_000,
            cache_step: 0.25,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OdeStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

impl OdeStats {
    pub fn absorb(&mut self, other: OdeStats) {
        self.accepted += other.accepted;
        self.rejected += other.rejected;
        self.evaluations += other.evaluations;
    }
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Integrates `y' = f(t, y)` from `t0` to `t1 >= t0`.
pub fn dopri5<F>(mut f: F, t0: f64, y0: &DVector<f64>, t1: f64, cfg: &IntegratorConfig) -> Result<(DVector<f64>, OdeStats)>
where
    F: FnMut(f64, &DVector<f64>) -> DVector<f64>,
{
    if t1 < t0 {
        return Err(Error::Domain(format!("integration end {t1} precedes start {t0}")));
    }
    let mut stats = OdeStats::default();
    let mut y = y0.clone();
    if t1 == t0 {
        return Ok((y, stats));
    }
    let n = y.len();
    let mut t = t0;
    let mut h = cfg.h_init.min(t1 - t0);
    let mut k: Vec<DVector<f64>> = vec![DVector::zeros(n); 7];
    k[0] = f(t, &y);
    stats.evaluations += 1;
    let mut stage = DVector::zeros(n);
    while t < t1 {
        if stats.accepted + stats.rejected >= cfg.max_steps {
            return Err(Error::Divergence { horizon: t, what: "integrator step budget exhausted".into() });
        }
        let last = t + h >= t1;
        if last {
            h = t1 - t;
        }
        for i in 1..7 {
            stage.copy_from(&y);
            for (j, kj) in k.iter().enumerate().take(i) {
                let aij = A[i][j];
                if aij != 0.0 {
                    stage.axpy(h * aij, kj, 1.0);
                }
            }
            k[i] = f(t + C[i] * h, &stage);
        }
        stats.evaluations += 6;
        // stage 7 is evaluated at the fifth-order solution (FSAL)
        let y5 = stage.clone();
        let mut err = 0.0;
        for idx in 0..n {
            let mut e = 0.0;
            for i in 0..7 {
                e += (B5[i] - B4[i]) * k[i][idx];
            }
            e *= h;
            let sc = cfg.atol + cfg.rtol * y[idx].abs().max(y5[idx].abs());
            err += (e / sc).powi(2);
        }
        let err = (err / n.max(1) as f64).sqrt();
        if !err.is_finite() {
            return Err(Error::Divergence { horizon: t, what: "non-finite state".into() });
        }
        if err <= 1.0 {
            t = if last { t1 } else { t + h };
            y = y5;
            k[0] = k[6].clone();
            stats.accepted += 1;
            if y.amax() > DIVERGENCE_GUARD {
                return Err(Error::Divergence { horizon: t, what: format!("state magnitude {:e}", y.amax()) });
            }
            let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            h *= fac;
        } else {
            stats.rejected += 1;
            h *= (0.9 * err.powf(-0.2)).clamp(0.1, 1.0);
            if h < cfg.h_min {
                return Err(Error::StepUnderflow(t));
            }
        }
    }
    Ok((y, stats))
}
