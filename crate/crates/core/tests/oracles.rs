mod common;

use std::f64::consts::PI;

use approx::assert_relative_eq;
use invman::admissibility::{
    beta_integral, compute_alpha, compute_alpha_generic, compute_beta_generic, compute_s, s_sup_numeric, LipschitzEnvelope,
    QuadratureConfig, RadiusFunction,
};
use invman::bounds::BoundFamily;
use invman::functions::ScalarFn;
use invman::linear_system::LinearSystem;
use invman::solver::{BoxRule, ManifoldSolver, SolverConfig};
use nalgebra::DVector;

use common::*;

struct Planar {
    a: ScalarFn,
    b: ScalarFn,
    c: ScalarFn,
    d: ScalarFn,
    /// Hand-written `(ln 𝔞)'`, `(ln 𝔟)'`, `(ln 𝔠)'`, `(ln 𝔡)'`.
    dlog: fn(f64) -> [f64; 4],
}

fn planar_cases() -> Vec<Planar> {
    vec![
        Planar {
            a: ScalarFn::exp(1.0, 1.0),
            b: ScalarFn::constant(1.0),
            c: ScalarFn::constant(1.0),
            d: ScalarFn::constant(1.0),
            dlog: |_| [1.0, 0.0, 0.0, 0.0],
        },
        Planar {
            a: ScalarFn::exp(1.0, 1.0),
            b: ScalarFn::constant(1.0),
            c: ScalarFn::exp(1.0, 0.1),
            d: ScalarFn::constant(1.0),
            dlog: |_| [1.0, 0.0, 0.1, 0.0],
        },
        Planar {
            a: ScalarFn::power(1.0, 2.0),
            b: ScalarFn::power(1.0, 1.0),
            c: ScalarFn::power(2.0, 0.5),
            d: ScalarFn::power(1.0, 0.3),
            dlog: |t| [2.0 / (t + 1.0), 1.0 / (t + 1.0), 0.5 / (t + 1.0), 0.3 / (t + 1.0)],
        },
    ]
}

fn planar_rates(p: &Planar, t: f64) -> (f64, f64) {
    let [da, db, dc, dd] = (p.dlog)(t);
    let osc = 0.5 * (t.cos() - 1.0);
    let u = -da + dc * osc - p.c.ln_value(t) * 0.5 * t.sin();
    let v = db + dd * osc - p.d.ln_value(t) * 0.5 * t.sin();
    (u, v)
}

#[test]
fn product_evolution_matches_runge_kutta() {
    let pairs = [(0.5, 0.0), (PI, 0.0), (2.0 * PI, PI), (7.3, 2.1), (12.0, 0.3), (4.0 * PI, 3.0 * PI)];
    for p in planar_cases() {
        let sys = LinearSystem::build_product_example(p.a, p.b, p.c, p.d).unwrap();
        for &(t, s) in &pairs {
            let v = sys.evolve(t, s, &DVector::from_vec(vec![1.0, 1.0])).unwrap();
            let steps = (4000.0 * (t - s)).ceil() as usize;
            let u_rk = rk4_scalar(|r| planar_rates(&p, r).0, s, t, 1.0, steps);
            let v_rk = rk4_scalar(|r| planar_rates(&p, r).1, s, t, 1.0, steps);
            assert!(rel(v[0], u_rk) < 1e-9, "U({t},{s}): {} vs {u_rk}", v[0]);
            assert!(rel(v[1], v_rk) < 1e-9, "V({t},{s}): {} vs {v_rk}", v[1]);
        }
    }
}

#[test]
fn product_evolution_reference_values() {
    let sys = LinearSystem::build_product_example(ScalarFn::exp(1.0, 1.0), ScalarFn::constant(1.0), ScalarFn::constant(1.0), ScalarFn::constant(1.0))
        .unwrap();
    let v = sys.evolve(PI, 0.0, &DVector::from_vec(vec![1.0, 1.0])).unwrap();
    assert_relative_eq!(v[0], (-PI).exp(), max_relative = 1e-12);
    assert_relative_eq!(v[0], 0.0432139, max_relative = 1e-6);
    assert_relative_eq!(v[1], 1.0, max_relative = 1e-12);

    let v = exp_system().evolve(2.0 * PI, PI, &DVector::from_vec(vec![1.0, 0.0])).unwrap();
    assert_relative_eq!(v[0], (-0.9 * PI).exp(), max_relative = 1e-12);
    assert_eq!(v[1], 0.0);
    assert_relative_eq!(v[0], exp_u(2.0 * PI, PI), max_relative = 1e-12);
}

#[test]
fn numeric_product_agrees_with_closed_form() {
    for p in planar_cases() {
        let exact = LinearSystem::build_product_example(p.a, p.b, p.c, p.d).unwrap();
        let numeric = LinearSystem::product_coefficient(p.a, p.b, p.c, p.d, Default::default()).unwrap();
        for (t, s) in [(1.0, 0.0), (2.0 * PI, PI), (9.5, 4.25)] {
            let e = exact.transition(t, s).unwrap();
            let n = numeric.transition(t, s).unwrap();
            assert!((e - n).amax() < 1e-8, "({t},{s})");
        }
    }
}

#[test]
fn exponential_bound_values() {
    let b = exp_bounds();
    assert_relative_eq!(b.eval_a(2.0, 1.0).unwrap(), (-0.9f64).exp(), max_relative = 1e-14);
    assert_relative_eq!(b.eval_a(2.0, 1.0).unwrap(), 0.4065697, max_relative = 1e-6);
    assert_relative_eq!(b.eval_b(3.0, 1.0).unwrap(), (0.3f64).exp(), max_relative = 1e-14);
}

#[test]
fn alpha_by_quadrature_matches_antiderivatives() {
    let cfg = QuadratureConfig::default();
    let generic = compute_alpha_generic(&exp_bounds(), &exp_lip(), &cfg).unwrap();
    assert!(rel(generic.value, 0.1) < 1e-6, "{generic:?}");

    let cf = BoundFamily::ProductForm {
        frak_a: ScalarFn::exp(1.0, 1.0),
        frak_b: ScalarFn::constant(1.0),
        frak_c: ScalarFn::exp(1.0, 0.1),
        frak_d: ScalarFn::constant(1.0),
    };
    let est = compute_alpha(&cf, &exp_lip(), &cfg).unwrap();
    assert!(rel(est.value, 0.1) < 1e-6, "{est:?}");

    let poly = BoundFamily::ProductForm {
        frak_a: ScalarFn::power(1.0, 1.0),
        frak_b: ScalarFn::constant(1.0),
        frak_c: ScalarFn::power(2.0, 0.5),
        frak_d: ScalarFn::constant(1.0),
    };
    let est = compute_alpha(&poly, &LipschitzEnvelope::PolyDecay { delta: 0.01, p: 2.0 }, &cfg).unwrap();
    assert!(rel(est.value, 0.04) < 1e-6, "{est:?}");
}

#[test]
fn beta_integrals_match_dense_quadrature() {
    let cfg = QuadratureConfig::default();
    let b = exp_bounds();
    let lip = exp_lip();
    for s in [0.0, 1.0, 5.0, 20.0] {
        let (lim, _) = beta_integral(&b, &lip, s, &cfg).unwrap();
        let dense = gauss(|r| b.eval_b(r, s).unwrap() * b.eval_a(r, s).unwrap() * 0.01 * (-0.2 * r).exp(), s, s + 60.0, 600);
        assert!(rel(lim.value(), dense) < 1e-8, "s = {s}: {} vs {dense}", lim.value());
        assert!(rel(dense, BETA) < 1e-10);
    }
    let generic = compute_beta_generic(&b, &lip, &cfg).unwrap();
    assert!(rel(generic.value, BETA) < 1e-6, "{generic:?}");
    assert_relative_eq!(generic.value, 0.0090909, max_relative = 1e-5);
}

fn grid_sup(bounds: &BoundFamily, radius: &RadiusFunction, s: f64, span: f64) -> f64 {
    (0..=200_000)
        .map(|k| s + span * k as f64 / 200_000.0)
        .map(|t| bounds.eval_a(t, s).unwrap() * radius.value(s) / radius.value(t))
        .fold(0.0, f64::max)
}

#[test]
fn s_factor_matches_grid_search() {
    let cfg = QuadratureConfig::default();
    let bounds = exp_bounds();
    let radius = RadiusFunction::Exp { delta: 0.1, beta: 0.5 };
    let s0 = compute_s(&bounds, &radius, ALPHA, 0.0, &cfg).unwrap();
    assert_relative_eq!(s0.value.unwrap(), 2.0 / 0.6, max_relative = 1e-12);
    for s in [0.0, 2.0, 7.5] {
        let numeric = s_sup_numeric(&bounds, &radius, s, &cfg).unwrap().unwrap();
        let grid = grid_sup(&bounds, &radius, s, 60.0);
        assert!(rel(numeric, grid) < 1e-6, "s = {s}: {numeric} vs {grid}");
        assert_relative_eq!(numeric, (0.1 * s).exp(), max_relative = 1e-6);
    }

    let flat = BoundFamily::Exponential { d: 1.0, a: -1.0, b: 0.0, eps: 0.0 };
    let constant = RadiusFunction::Constant { rho0: 0.3 };
    let sf = compute_s(&flat, &constant, 0.0, 3.0, &cfg).unwrap();
    assert_relative_eq!(sf.value.unwrap(), 2.0, max_relative = 1e-12);
    assert_relative_eq!(grid_sup(&flat, &constant, 3.0, 30.0), 1.0, max_relative = 1e-12);
}

fn slope(t: f64) -> f64 {
    0.8 * (-0.1 * t).exp()
}

#[test]
fn inner_step_matches_fine_quadrature() {
    let sys = exp_system();
    let f = tanh_f();
    let cfg = SolverConfig { s_max: 4.0, active_nodes: 801, xi_nodes: 5, ..Default::default() };
    let solver = ManifoldSolver::new(&sys, &exp_bounds(), &f, ALPHA, BETA, BoxRule::Constant(1.0), cfg).unwrap();
    let mut graph = solver.zero_graph();
    for i in 0..graph.n_s() {
        for j in 0..graph.n_xi() {
            let xi = graph.xi_node(i, j)[0];
            graph.value_mut(i, j)[0] = slope(graph.s_grid[i]) * xi;
        }
    }
    let times = solver.times().to_vec();
    let active = graph.active_len;
    for (i, xi) in [(0, 0.5), (0, -1.0), (200, 0.75)] {
        let s = times[i];
        let x = solver.seed_trajectory(i, &[xi]).unwrap();
        let y = solver.apply_j(&graph, &x).unwrap();
        let forcing = |r: f64| 0.01 * (-0.2 * r).exp() * (slope(r) * exp_u(r, s) * xi).tanh() / exp_u(r, s);
        let mut acc = 0.0;
        let mut worst: f64 = 0.0;
        for m in 0..active - i {
            if m > 0 {
                acc += gauss(forcing, times[i + m - 1], times[i + m], 8);
            }
            let oracle = exp_u(times[i + m], s) * (xi + acc);
            worst = worst.max((y.samples[m][0] - oracle).abs());
        }
        assert!(worst < 1e-7, "s = {s}, ξ = {xi}: max deviation {worst:e}");
    }
}

#[test]
fn outer_step_matches_dense_quadrature() {
    let sys = exp_system();
    let f = tanh_f();
    let cfg = SolverConfig { active_nodes: 401, xi_nodes: 5, ..Default::default() };
    let solver = ManifoldSolver::new(&sys, &exp_bounds(), &f, ALPHA, BETA, BoxRule::Constant(1.0), cfg).unwrap();
    let phi = solver.phi_at(&solver.zero_graph(), 0, &[0.5]).unwrap();
    let integrand = |r: f64| 0.01 * (-0.2 * r).exp() * (0.5 * exp_u(r, 0.0)).tanh();
    let oracle = -(gauss(integrand, 0.0, 20.0, 4000) + gauss(integrand, 20.0, 2.0 * solver.horizon().min(200.0), 2000));
    assert!((phi[0] - oracle).abs() < 1e-6, "{} vs {oracle}", phi[0]);
}
