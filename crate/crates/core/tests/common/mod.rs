#![allow(dead_code)]

use invman::admissibility::LipschitzEnvelope;
use invman::bounds::BoundFamily;
use invman::functions::ScalarFn;
use invman::linear_system::LinearSystem;
use invman::perturbation::Perturbation;

const GL_NODES: [f64; 5] = [0.0, -0.538_469_310_105_683_1, 0.538_469_310_105_683_1, -0.906_179_845_938_664, 0.906_179_845_938_664];
const GL_WEIGHTS: [f64; 5] = [
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_5,
    0.478_628_670_499_366_5,
    0.236_926_885_056_189_1,
    0.236_926_885_056_189_1,
];

/// Composite five-point Gauss–Legendre with `pieces` equal panels.
pub fn gauss<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, pieces: usize) -> f64 {
    let h = (b - a) / pieces as f64;
    let mut acc = 0.0;
    for k in 0..pieces {
        let mid = a + (k as f64 + 0.5) * h;
        for (x, w) in GL_NODES.iter().zip(GL_WEIGHTS) {
            acc += w * f(mid + 0.5 * h * x);
        }
    }
    0.5 * h * acc
}

/// Classical fourth-order Runge–Kutta for a scalar linear ODE `y' = k(t) y`.
pub fn rk4_scalar<K: Fn(f64) -> f64>(k: K, s: f64, t: f64, y0: f64, steps: usize) -> f64 {
    let h = (t - s) / steps as f64;
    let mut y = y0;
    for n in 0..steps {
        let r = s + n as f64 * h;
        let k1 = k(r) * y;
        let k2 = k(r + 0.5 * h) * (y + 0.5 * h * k1);
        let k3 = k(r + 0.5 * h) * (y + 0.5 * h * k2);
        let k4 = k(r + h) * (y + h * k3);
        y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    y
}

pub fn rel(x: f64, y: f64) -> f64 {
    (x - y).abs() / y.abs().max(f64::MIN_POSITIVE)
}

pub fn exp_bounds() -> BoundFamily {
    BoundFamily::Exponential { d: 1.0, a: -1.0, b: 0.0, eps: 0.1 }
}

pub fn exp_lip() -> LipschitzEnvelope {
    LipschitzEnvelope::ExpDecay { delta: 0.01, rate: 0.2 }
}

/// `𝔞 = e^t`, `𝔟 = 1`, `𝔠 = e^{0.1t}`, `𝔡 = 1`: the planar system behind the exponential bounds.
pub fn exp_system() -> LinearSystem {
    LinearSystem::build_product_example(ScalarFn::exp(1.0, 1.0), ScalarFn::constant(1.0), ScalarFn::exp(1.0, 0.1), ScalarFn::constant(1.0))
        .unwrap()
}

/// `U(t,s)` of [`exp_system`], written out by hand.
pub fn exp_u(t: f64, s: f64) -> f64 {
    let ln_f = |x: f64| -x + 0.1 * x * 0.5 * (x.cos() - 1.0);
    (ln_f(t) - ln_f(s)).exp()
}

pub fn tanh_f() -> Perturbation {
    Perturbation::tanh_cross(exp_lip())
}

pub const ALPHA: f64 = 0.1;
pub const BETA: f64 = 0.01 / 1.1;
