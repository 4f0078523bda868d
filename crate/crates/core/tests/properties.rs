use proptest::prelude::*;

use spinglass_ldp::finite_n::lambda_from_samples;
use spinglass_ldp::ldp::{rate_legendre, LaplaceCurve};
use spinglass_ldp::quadrature::GaussLegendre;
use spinglass_ldp::variational::{objective, ObjectiveSpec};
use spinglass_ldp::{solve_zero_temp, FieldSpec, GammaPath, MixtureSpec, PdeGrid};

fn mixture() -> impl Strategy<Value = MixtureSpec> {
    (0.2..1.5f64, 0.0..0.8f64, 0.0..0.5f64)
        .prop_map(|(b2, b3, b4)| MixtureSpec::new(vec![(2, b2), (3, b3), (4, b4)]).unwrap())
}

fn gamma(s_floor: f64) -> impl Strategy<Value = GammaPath> {
    prop::collection::vec((0.02..0.98f64, 0.0..2.0f64), 0..4).prop_map(move |mut steps| {
        steps.sort_by(|a, b| a.0.total_cmp(&b.0));
        steps.dedup_by(|a, b| (a.0 - b.0).abs() < 1e-3);
        let mut m = s_floor;
        let mut knots = vec![(0.0, m)];
        for (q, d) in steps {
            m += d;
            knots.push((q, m));
        }
        GammaPath::new(s_floor, knots).unwrap()
    })
}

fn coarse(mix: &MixtureSpec, h: f64) -> PdeGrid {
    let g = PdeGrid::for_problem(mix, &FieldSpec::deterministic(h));
    PdeGrid { n_x: 2 * ((g.n_x - 1) / 4) + 1, quad_order: 24, ..g }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn theta_is_nondecreasing_and_inverse_roundtrips(mix in mixture(), a in 0.0..1.0f64, b in 0.0..1.0f64) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(mix.theta(hi) >= mix.theta(lo) - 1e-15);
        prop_assert_eq!(mix.xi(0.0), 0.0);
        let r = mix.xi_prime_inverse(mix.xi_prime(a));
        prop_assert!((r - a).abs() < 1e-9);
    }

    #[test]
    fn increments_roundtrip(g in gamma(0.3)) {
        let times: Vec<f64> = g.knot_times().collect();
        let back = GammaPath::from_increments(0.3, &times, &g.increments()).unwrap();
        prop_assert!(back.l1_distance(&g) < 1e-12);
        prop_assert!(g.increments().iter().all(|&d| d >= 0.0));
    }

    #[test]
    fn correction_matches_quadrature(mix in mixture(), g in gamma(0.0)) {
        let gl = GaussLegendre::new(40);
        let mut cuts: Vec<f64> = g.knot_times().collect();
        cuts.push(1.0);
        let direct: f64 = cuts.windows(2)
            .map(|w| 0.5 * g.value(w[0]) * gl.integrate(w[0], w[1], |t| t * mix.xi_second(t)))
            .sum();
        prop_assert!((direct - g.correction(&mix)).abs() < 1e-10);
    }

    #[test]
    fn empirical_lambda_is_convex(ls in prop::collection::vec(-1.0..2.0f64, 2..50), n in 1usize..20) {
        let v: Vec<f64> = (0..6).map(|i| lambda_from_samples(&ls, n, 0.3 * i as f64).value).collect();
        for w in v.windows(3) {
            prop_assert!(w[0] + w[2] - 2.0 * w[1] >= -1e-10);
        }
    }

    #[test]
    fn legendre_satisfies_fenchel_young(a in 0.1..2.0f64, b in 0.1..1.0f64, s in 0.0..2.0f64, r in -1.0..3.0f64) {
        let grid: Vec<f64> = (0..=40).map(|i| 0.05 * i as f64).collect();
        let curve = LaplaceCurve::synthetic(&grid, |s| a * s + 0.5 * b * s * s, |s| a + b * s);
        let rate = rate_legendre(&curve, r);
        prop_assert!(rate.rate >= 0.0);
        prop_assert!(s * r <= curve.lambda_at(s) + rate.rate + 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10))]

    #[test]
    fn pde_gradient_is_bounded_and_odd(mix in mixture(), g in gamma(0.0)) {
        let sol = solve_zero_temp(&mix, &g, &coarse(&mix, 1.0)).unwrap();
        prop_assert!(sol.max_abs_psi_x() <= 1.0 + 1e-9);
        for x in [0.3, 1.0, 2.5] {
            let (p, px, pxx) = sol.at_zero(x);
            let (q, qx, _) = sol.at_zero(-x);
            prop_assert!((p - q).abs() < 1e-12 && (px + qx).abs() < 1e-12);
            prop_assert!(pxx >= -1e-9 && px > 0.0);
        }
    }

    #[test]
    fn objective_is_lipschitz_and_convex_in_gamma(g1 in gamma(0.0), g2 in gamma(0.0), h in 0.0..1.0f64) {
        let sk = MixtureSpec::sk(1.0);
        let spec = ObjectiveSpec::zero_temp(sk.clone(), FieldSpec::deterministic(h), 0.0).unwrap()
            .with_grid(coarse(&sk, h));
        let (v1, v2) = (objective(&spec, &g1).unwrap(), objective(&spec, &g2).unwrap());
        // ½ ∫ ξ'' |γ₁ − γ₂| dt, with ξ'' = 2
        let bound = g1.l1_distance(&g2);
        prop_assert!((v1 - v2).abs() <= bound + 1e-6, "{} > {}", (v1 - v2).abs(), bound);
        let vm = objective(&spec, &g1.midpoint(&g2)).unwrap();
        prop_assert!(vm <= 0.5 * (v1 + v2) + 1e-6);
    }
}
