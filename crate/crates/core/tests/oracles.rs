use spinglass_ldp::finite_n::{
    annealed_free_energy, fractional_moments_mc, fractional_moment_mc, ground_states, lambda_from_samples,
    tail_from_samples,
};
use spinglass_ldp::ldp::{lambda_curve, rate_legendre, CurveConfig};
use spinglass_ldp::martingale::SdeConfig;
use spinglass_ldp::variational::ground_state;
use spinglass_ldp::{FieldSpec, MixtureSpec};

#[test]
fn sk_ground_state_is_bracketed() {
    let sk = MixtureSpec::sk(1.0);
    let gs = ground_state(&sk, &FieldSpec::deterministic(0.0)).unwrap();
    // γ ≡ 0 gives E|√2 Z| = √(4/π)
    assert!(gs < (4.0 / std::f64::consts::PI).sqrt());
    let envelope = [8, 12, 16]
        .iter()
        .map(|&n| {
            let ls = ground_states(&sk, 0.0, n, 200, 1).unwrap();
            ls.iter().sum::<f64>() / ls.len() as f64
        })
        .fold(f64::NEG_INFINITY, f64::max);
    assert!(envelope < gs, "{envelope} vs {gs}");
}

#[test]
fn fractional_moment_near_one_is_annealed() {
    let sk = MixtureSpec::sk(1.0);
    let field = FieldSpec::deterministic(0.5);
    let e = fractional_moment_mc(&sk, &field, 4, 0.999, 1.0, 100_000, 3).unwrap();
    let annealed = annealed_free_energy(&sk, &field);
    assert!((e.value - annealed).abs() < 3.0 * e.stderr, "{e:?} vs {annealed}");
}

#[test]
fn fractional_moment_increases_with_beta() {
    let sk = MixtureSpec::sk(1.0);
    let est = fractional_moments_mc(&sk, &FieldSpec::deterministic(0.3), 8, 0.5, &[2.0, 8.0], 300, 2).unwrap();
    assert!(est[1].value >= est[0].value);
}

#[test]
fn one_spin_laplace_transform() {
    let ls = ground_states(&MixtureSpec::sk(1.0), -0.7, 1, 50_000, 4).unwrap();
    for s in [0.3, 0.8] {
        let e = lambda_from_samples(&ls, 1, s);
        let exact = 0.7 * s + 0.5 * s * s;
        assert!((e.value - exact).abs() < 3.0 * e.stderr, "{e:?} vs {exact}");
    }
}

#[test]
fn tail_probability_obeys_chebyshev() {
    let n = 12;
    let ls = ground_states(&MixtureSpec::sk(1.0), 0.5, n, 2000, 6).unwrap();
    let lowest = ls.iter().cloned().fold(f64::INFINITY, f64::min);
    assert_eq!(tail_from_samples(&ls, n, lowest).estimate.value, 0.0);
    for r in [1.1, 1.2, 1.3] {
        let t = tail_from_samples(&ls, n, r);
        for s in [0.25, 0.5, 1.0, 2.0] {
            let lam = lambda_from_samples(&ls, n, s);
            assert!(t.estimate.value >= s * r - lam.value - lam.stderr, "r = {r}, s = {s}");
        }
    }
}

#[test]
fn tail_slope_at_sixteen_spins_is_near_the_rate() {
    let sk = MixtureSpec::sk(1.0);
    let cfg = CurveConfig {
        s_grid: (0..=12).map(|i| 0.1 * i as f64).collect(),
        sde: SdeConfig { n_paths: 10_000, ..Default::default() },
        ..Default::default()
    };
    let curve = lambda_curve(&sk, 0.5, &cfg).unwrap();
    let r = curve.gs + 0.2;
    let rate = rate_legendre(&curve, r).rate;
    let ls = ground_states(&sk, 0.5, 16, 2000, 8).unwrap();
    let t = tail_from_samples(&ls, 16, r);
    assert!(!t.one_sided);
    let v = t.estimate.value;
    assert!(v >= rate - 0.1 && v <= rate + 0.15, "tail slope {v} vs Λ* = {rate}");
}
