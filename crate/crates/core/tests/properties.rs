mod common;

use invman::admissibility::{check_global_gate, check_local_gate, LipschitzEnvelope, RadiusFunction};
use invman::bounds::BoundFamily;
use invman::functions::{Growth, Rho};
use invman::linear_system::{LinearSystem, Splitting};
use invman::perturbation::{sample_quotients, Perturbation};
use invman::solver::{BoxRule, ManifoldSolver, SolverConfig};
use invman::verification::rng;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use common::*;

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig { cases, failure_persistence: None, ..ProptestConfig::default() }
}

fn matched_families() -> Vec<BoundFamily> {
    vec![
        exp_bounds(),
        BoundFamily::Polynomial { d: 1.5, a: -2.0, b: 0.5, eps: 0.3 },
        BoundFamily::Rho { d: 1.0, a: -1.0, b: 0.2, eps: 0.1, rho: Rho::Power { k: 1.0, p: 1.5 } },
        BoundFamily::MuNu { d: 1.2, a: -1.0, b: 0.5, eps: 0.2, mu: Growth::Power { p: 2.0 }, nu: Growth::Power { p: 1.0 } },
    ]
}

fn matched_system(b: &BoundFamily) -> LinearSystem {
    let pf = b.as_product_form().expect("product form");
    LinearSystem::build_product_example(pf.frak_a, pf.frak_b, pf.frak_c, pf.frak_d).unwrap()
}

proptest! {
    #![proptest_config(config(64))]

    #[test]
    fn projected_evolution_is_dominated_by_the_bounds(s in 0.0f64..15.0, lag in 0.0f64..15.0, which in 0usize..4) {
        let b = &matched_families()[which];
        let sys = matched_system(b);
        let t = s + lag;
        let (e, _) = sys.restricted(t, s).unwrap();
        let vinv = sys.inverse_f_block(t, s).unwrap();
        prop_assert!(e[(0, 0)].abs() <= b.eval_a(t, s).unwrap() * (1.0 + 1e-12));
        prop_assert!(vinv[(0, 0)].abs() <= b.eval_b(t, s).unwrap() * (1.0 + 1e-12));
    }

    #[test]
    fn cocycle_and_commutation(s in 0.0f64..10.0, l1 in 0.0f64..8.0, l2 in 0.0f64..8.0, which in 0usize..4) {
        let sys = matched_system(&matched_families()[which]);
        let (r, t) = (s + l1, s + l1 + l2);
        let scale = sys.transition(t, s).unwrap().amax().max(1.0);
        let rep = sys.check_cocycle(&[(t, r, s)], 1e-12 * scale).unwrap();
        prop_assert!(rep.passed, "{rep:?}");
        prop_assert!(sys.check_commutation(&[(t, s), (r, s)]).unwrap() <= 1e-12);
    }

    #[test]
    fn oblique_splitting_is_a_projection(k in -3.0f64..3.0, x in -5.0f64..5.0, y in -5.0f64..5.0) {
        let p = DMatrix::from_row_slice(2, 2, &[1.0, k, 0.0, 0.0]);
        let sp = Splitting::new(p.clone()).unwrap();
        prop_assert!((&p * &p - &p).amax() <= 1e-12);
        let v = DVector::from_vec(vec![x, y]);
        let back = sp.join(&sp.e_coords(&v), &sp.f_coords(&v));
        prop_assert!((back - &v).amax() <= 1e-12 * (1.0 + v.amax()));
    }

    #[test]
    fn truncation_quotients_stay_below_the_ball_bound(
        c in 0.1f64..2.0,
        q in 0.5f64..2.0,
        delta in 0.05f64..1.0,
        beta in 0.0f64..0.5,
        seed in any::<u64>(),
    ) {
        let radius = RadiusFunction::Exp { delta, beta };
        let f = Perturbation::power_cross(c, q).truncate(&radius);
        let times = [0.0, 0.7, 3.0, 9.0];
        let rep = sample_quotients(
            &f,
            (1, 1),
            &times,
            200,
            |t| 3.0 * radius.value(t),
            |t| 2f64.powf(q) * c * radius.value(t).powf(q),
            &mut rng(seed),
        );
        prop_assert!(rep.worst_ratio <= 1.0 + 1e-6, "{rep:?}");
        prop_assert_eq!(rep.worst_at_zero, 0.0);
    }

    #[test]
    fn tanh_cross_respects_its_envelope(delta in 0.001f64..0.5, rate in 0.0f64..1.0, seed in any::<u64>()) {
        let env = LipschitzEnvelope::ExpDecay { delta, rate };
        let f = Perturbation::tanh_cross(env.clone());
        let rep = sample_quotients(&f, (2, 1), &[0.0, 1.0, 4.0], 100, |_| 4.0, |t| env.value(t), &mut rng(seed));
        prop_assert!(rep.worst_ratio <= 1.0 + 1e-9, "{rep:?}");
    }

    #[test]
    fn gate_margins_follow_their_formulas(alpha in 0.0f64..0.6, beta in 0.0f64..0.6) {
        let g = check_global_gate(alpha, beta);
        prop_assert_eq!(g.passed, 2.0 * alpha + (2.0 * beta).max(beta.sqrt()) < 1.0);
        let l = check_local_gate(alpha, beta);
        prop_assert_eq!(l.passed, 4.0 * alpha + (4.0 * beta).max((2.0 * beta).sqrt()) < 1.0);
        if l.passed {
            prop_assert!(g.passed);
        }
    }
}

proptest! {
    #![proptest_config(config(4))]

    #[test]
    fn solved_graphs_are_lipschitz_and_vanish_at_the_origin(delta in 0.001f64..0.02, e_dim in 1usize..3) {
        let lip = LipschitzEnvelope::ExpDecay { delta, rate: 0.2 };
        let f = Perturbation::tanh_cross(lip);
        let (alpha, beta) = (delta / 0.1, delta / 1.1);
        let sys = if e_dim == 1 { exp_system() } else { LinearSystem::diagonal(vec![-1.0, -1.2, 0.0, 0.1], 2, Default::default()).unwrap() };
        let bounds = if e_dim == 1 { exp_bounds() } else { BoundFamily::Exponential { d: 1.0, a: -1.0, b: 0.0, eps: 0.0 } };
        let (alpha, beta) = if e_dim == 1 { (alpha, beta) } else { (delta / 0.2, delta / 1.2) };
        let cfg = SolverConfig { s_max: 5.0, active_nodes: 21, tail_nodes: 30, xi_nodes: 7, ..Default::default() };
        let sol = ManifoldSolver::new(&sys, &bounds, &f, alpha, beta, BoxRule::Constant(1.0), cfg).unwrap().solve().unwrap();
        let g = &sol.graph;
        prop_assert!(g.zero_at_origin());
        prop_assert!(g.lipschitz_constants().iter().all(|&l| l <= 1.0 + 1e-6));
        prop_assert_eq!(g.values.len(), g.n_s() * g.n_xi() * g.dim_f);
        prop_assert!(g.outer_iterations <= 10);
    }
}
