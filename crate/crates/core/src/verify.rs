//! The acceptance suite, shared by the `verify` command and the
//! `acceptance` test target.

use std::time::Instant;

use serde::Serialize;

use crate::error::Result;
use crate::finite_n::{covariance_check, empirical_lambda, fractional_moments_mc, random_configuration};
use crate::gamma::GammaPath;
use crate::ldp::{lambda_curve, quadratic_probe, rate_direct, rate_legendre, CurveConfig, LaplaceCurve};
use crate::martingale::{simulate_optimal, solve_for_simulation, uninverted_value, MartingaleStats};
use crate::mixture::{FieldSpec, MixtureSpec};
use crate::pde::{solve_finite_temp, solve_zero_temp, PdeGrid, PdeSolution};
use crate::quadrature::erf;
use crate::variational::{fractional_moment_limit, minimize, ObjectiveSpec};

#[derive(Debug, Clone, Serialize)]
pub struct Criterion {
    pub id: u32,
    pub title: String,
    pub passed: bool,
    pub checks: Vec<(bool, String)>,
}

impl Criterion {
    fn new(id: u32, title: &str) -> Self {
        Self { id, title: title.into(), passed: true, checks: Vec::new() }
    }

    fn check(&mut self, ok: bool, what: String) {
        self.passed &= ok;
        self.checks.push((ok, what));
    }

    fn note(&mut self, what: String) {
        self.checks.push((true, format!("note: {what}")));
    }

    pub fn summary_line(&self) -> String {
        format!("criterion {:>2} {}: {}", self.id, if self.passed { "PASS" } else { "FAIL" }, self.title)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub criteria: Vec<Criterion>,
    pub seconds: f64,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.criteria.iter().all(|c| c.passed)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for c in &self.criteria {
            out.push_str(&c.summary_line());
            out.push('\n');
            for (ok, what) in &c.checks {
                out.push_str(&format!("    [{}] {what}\n", if *ok { "ok" } else { "FAIL" }));
            }
        }
        let passed = self.criteria.iter().filter(|c| c.passed).count();
        out.push_str(&format!("passed {passed}/{} in {:.0} s\n", self.criteria.len(), self.seconds));
        out
    }
}

#[derive(Debug, Clone, Default)]
pub struct VerifyOptions {
    pub seed: u64,
    pub curve: CurveConfig,
}

/// `E|x + √2 Z|`.
fn heat_kernel_abs(x: f64) -> f64 {
    (4.0 / std::f64::consts::PI).sqrt() * (-x * x / 4.0).exp() + x * erf(x / 2.0)
}

struct Shape {
    max_psi_x: f64,
    min_psi_xx: f64,
    min_step: f64,
    odd_error: f64,
}

fn shape(sol: &PdeSolution) -> Shape {
    let mut s = Shape { max_psi_x: 0.0, min_psi_xx: f64::INFINITY, min_step: f64::INFINITY, odd_error: 0.0 };
    for i in 0..sol.slice_times().len() {
        let (_, _, px, pxx) = sol.slice_arrays(i);
        let n = px.len();
        for k in 0..n {
            s.max_psi_x = s.max_psi_x.max(px[k].abs());
            s.odd_error = s.odd_error.max((px[k] + px[n - 1 - k]).abs());
            if k > 0 {
                s.min_step = s.min_step.min(px[k] - px[k - 1]);
            }
        }
        if let Some(pxx) = pxx {
            s.min_psi_xx = pxx.iter().fold(s.min_psi_xx, |a, &v| a.min(v));
        }
    }
    s
}

struct DualityPoint {
    h: f64,
    s: f64,
    inf_value: f64,
    stats: MartingaleStats,
    seconds: f64,
    sol: PdeSolution,
}

fn duality_point(mix: &MixtureSpec, h: f64, s: f64, cfg: &CurveConfig) -> Result<DualityPoint> {
    let t0 = Instant::now();
    let spec = ObjectiveSpec::zero_temp(mix.clone(), FieldSpec::deterministic(h), s)?;
    let rep = minimize(&spec, &cfg.optimizer, None)?;
    let sol = solve_for_simulation(mix, &rep.best_gamma, &spec.grid, &cfg.sde)?;
    let stats = simulate_optimal(mix, h, &rep.best_gamma, &sol, &cfg.sde)?;
    Ok(DualityPoint { h, s, inf_value: rep.value, stats, seconds: t0.elapsed().as_secs_f64(), sol })
}

fn criterion1(mix: &MixtureSpec) -> Result<(Criterion, PdeSolution)> {
    let mut c = Criterion::new(1, "closed-form PDE at γ ≡ 0, ξ = r²");
    let t0 = Instant::now();
    let grid = PdeGrid::for_problem(mix, &FieldSpec::deterministic(2.0));
    let sol = solve_zero_temp(mix, &GammaPath::floor(0.0), &grid)?;
    let secs = t0.elapsed().as_secs_f64();
    let worst = [0.0, 0.5, -0.5, 1.0, -1.0, 2.0, -2.0]
        .iter()
        .map(|&x| (sol.at_zero(x).0 - heat_kernel_abs(x)).abs())
        .fold(0.0, f64::max);
    c.check(worst <= 1e-4, format!("max |Ψ(0,x) − closed form| = {worst:.2e} ≤ 1e-4"));
    c.check(secs < 1.0, format!("runtime {secs:.3} s < 1 s"));
    Ok((c, sol))
}

fn criterion2(sols: &[(String, &PdeSolution)]) -> Criterion {
    let mut c = Criterion::new(2, "gradient bound, convexity, odd nondecreasing ∂ₓΨ");
    for (name, sol) in sols {
        let s = shape(sol);
        c.check(
            s.max_psi_x <= 1.0 + 1e-9 && s.min_psi_xx >= -1e-9 && s.min_step >= -1e-12 && s.odd_error <= 1e-12,
            format!(
                "{name}: max|Ψ_x| − 1 = {:.1e}, min Ψ_xx = {:.1e}, min ΔΨ_x = {:.1e}, odd err = {:.1e}",
                s.max_psi_x - 1.0,
                s.min_psi_xx,
                s.min_step,
                s.odd_error
            ),
        );
    }
    c
}

fn criterion3(points: &[DualityPoint]) -> Criterion {
    let mut c = Criterion::new(3, "duality of inf and sup formulas");
    for p in points {
        let sup = uninverted_value(&p.stats, p.s);
        let gap = (p.inf_value - sup.value).abs();
        let tol = (5e-3f64).max(3.0 * sup.stderr);
        c.check(
            gap <= tol && p.seconds < 60.0,
            format!(
                "h = {}, s = {}: inf {:.6}, sup {:.6} ± {:.1e}, gap {gap:.2e} ≤ {tol:.1e}, {:.1} s",
                p.h, p.s, p.inf_value, sup.value, sup.stderr, p.seconds
            ),
        );
    }
    c
}

fn criterion6(points: &[DualityPoint]) -> Criterion {
    let mut c = Criterion::new(6, "balance equivalence at s = 0");
    for p in points.iter().filter(|p| p.s == 0.0) {
        let b = p.stats.balance_integral;
        let ok_sign = if p.h == 0.0 { b.value.abs() <= 3.0 * b.stderr } else { b.value > 3.0 * b.stderr };
        c.check(
            ok_sign && b.stderr <= 2e-3,
            format!(
                "h = {}: balance {:.2e} ± {:.2e} ({}), stderr ≤ 2e-3",
                p.h,
                b.value,
                b.stderr,
                if p.h == 0.0 { "|b| ≤ 3σ" } else { "b > 3σ" }
            ),
        );
    }
    c
}

fn criterion4(curves: &[&LaplaceCurve]) -> Criterion {
    let mut c = Criterion::new(4, "structure of Λ");
    for cv in curves {
        let p = &cv.points;
        c.check(p[0].lambda == 0.0, format!("h = {}: Λ(0) = {}", cv.h, p[0].lambda));
        let d0 = p[0].lambda_prime;
        c.check(
            (d0.value - cv.gs).abs() <= 3.0 * d0.stderr,
            format!("h = {}: Λ'(0) = {:.5} ± {:.1e} vs gs = {:.6}", cv.h, d0.value, d0.stderr, cv.gs),
        );
        let slopes: Vec<f64> = p.windows(2).map(|w| (w[1].lambda - w[0].lambda) / (w[1].s - w[0].s)).collect();
        let worst = slopes.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
        c.check(worst >= -1e-4, format!("h = {}: min change of secant slope {worst:.1e} ≥ −1e-4", cv.h));
        let below = p.iter().map(|q| q.lambda - (q.s * cv.h.abs() + 0.5 * q.s * q.s)).fold(f64::INFINITY, f64::min);
        c.check(below >= -1e-6, format!("h = {}: min (Λ(s) − s|h| − s²/2) = {below:.2e} ≥ 0", cv.h));
        let mut worst_fd: f64 = 0.0;
        let mut ok = true;
        for (w, (s, fd)) in p.windows(3).zip(cv.lambda_prime_fd()) {
            let env = w[1].lambda_prime;
            let diff = (env.value - fd).abs();
            ok &= diff <= (1e-2f64).max(3.0 * env.stderr);
            worst_fd = worst_fd.max(diff);
            debug_assert_eq!(s, w[1].s);
        }
        c.check(ok, format!("h = {}: max |envelope Λ' − central difference| = {worst_fd:.2e}", cv.h));
    }
    c
}

fn criterion5(mix: &MixtureSpec, curves: &[&LaplaceCurve], cfg: &CurveConfig) -> Result<Criterion> {
    let mut c = Criterion::new(5, "rate function consistency");
    for cv in curves {
        for off in [0.05, 0.1, 0.2] {
            let r = cv.gs + off;
            let leg = rate_legendre(cv, r);
            let dir = rate_direct(mix, cv.h, r, cv, cfg)?;
            let se = leg.stderr.hypot(dir.stderr);
            let tol = (1e-2f64).max(3.0 * se);
            let diff = (leg.rate - dir.rate).abs();
            let q = dir.quotient.map_or(String::new(), |q| format!(", quotient {:.4} ± {:.1e}", q.value, q.stderr));
            c.check(
                diff <= tol,
                format!(
                    "h = {}, r = gs + {off}: Legendre {:.5}, direct {:.5} ± {:.1e} at s* = {:.3}{q}, |diff| {diff:.1e} ≤ {tol:.1e}",
                    cv.h, leg.rate, dir.rate, dir.stderr, dir.s_star
                ),
            );
        }
        let at_gs = rate_legendre(cv, cv.gs).rate;
        c.check(at_gs.abs() <= 1e-3, format!("h = {}: Λ*(gs) = {at_gs:.1e}", cv.h));
        let rates: Vec<f64> = (0..=12).map(|i| rate_legendre(cv, cv.gs + 0.025 * i as f64).rate).collect();
        c.check(
            rates.windows(2).all(|w| w[1] >= w[0]),
            format!("h = {}: Λ* nondecreasing on gs + [0, 0.3]", cv.h),
        );
        let mut worst = f64::NEG_INFINITY;
        for &s in &[0.0, 0.5, 1.0, 1.5, 2.0] {
            let lam = cv.lambda_at(s);
            for off in [0.0, 0.05, 0.1, 0.2, 0.3] {
                let r = cv.gs + off;
                worst = worst.max(s * r - lam - rate_legendre(cv, r).rate);
            }
        }
        c.check(worst <= 1e-3, format!("h = {}: max (sr − Λ(s) − Λ*(r)) = {worst:.1e} ≤ 1e-3", cv.h));
    }
    Ok(c)
}

fn criterion7(h0: &LaplaceCurve, h5: &LaplaceCurve) -> Result<Criterion> {
    let mut c = Criterion::new(7, "quadratic probe");
    let deltas = [0.2, 0.1, 0.05, 0.025];
    let fmt = |ps: &[crate::ldp::ProbePoint]| ps.iter().map(|p| format!("{:.3}", p.ratio)).collect::<Vec<_>>().join(", ");
    let p5 = quadratic_probe(h5, &deltas)?;
    let (lo, hi) = p5.iter().fold((f64::INFINITY, 0.0f64), |(a, b), p| (a.min(p.ratio), b.max(p.ratio)));
    c.check(hi / lo <= 4.0, format!("h = 0.5: ratios [{}], max/min {:.2} ≤ 4", fmt(&p5), hi / lo));
    let p0 = quadratic_probe(h0, &deltas)?;
    let increasing = p0.windows(2).all(|w| w[1].ratio > w[0].ratio);
    let growth = p0[3].ratio / p0[0].ratio;
    c.check(
        increasing && growth >= 2.0,
        format!("h = 0: ratios [{}], strictly increasing {increasing}, last/first {growth:.2} ≥ 2", fmt(&p0)),
    );
    Ok(c)
}

fn criterion8(h5: &LaplaceCurve, h0: &LaplaceCurve) -> Criterion {
    let mut c = Criterion::new(8, "no flat piece with a field");
    c.check(h5.s_underline == 0.0, format!("h = 0.5: s_underline = {}", h5.s_underline));
    c.note(format!("h = 0: s_underline = {}", h0.s_underline));
    c
}

fn criterion9(limit: f64, seed: u64) -> Result<Criterion> {
    let mut c = Criterion::new(9, "finite-N oracle");
    let sk = MixtureSpec::sk(1.0);
    for s in [0.5, 1.0] {
        let e = empirical_lambda(&sk, 0.5, 1, s, 100_000, seed)?;
        let exact = 0.5 * s + 0.5 * s * s;
        c.check(
            (e.value - exact).abs() <= 3.0 * e.stderr,
            format!("N = 1, s = {s}: {:.5} ± {:.1e} vs {exact}", e.value, e.stderr),
        );
    }
    let mut gaps = Vec::new();
    for n in [8, 12, 16] {
        let e = empirical_lambda(&sk, 0.5, n, 0.5, 4000, seed)?;
        gaps.push(limit - e.value);
        c.note(format!("N = {n}: Λ_N(0.5) = {:.5} ± {:.1e}", e.value, e.stderr));
    }
    let trending = gaps.windows(2).all(|w| w[1].abs() < w[0].abs());
    c.check(
        trending && gaps[2].abs() <= 0.05,
        format!(
            "gaps to Λ(0.5) = {limit:.5}: {:.4}, {:.4}, {:.4}; decreasing {trending}, final ≤ 0.05",
            gaps[0], gaps[1], gaps[2]
        ),
    );
    let mixed = MixtureSpec::new(vec![(2, 1.0), (3, 0.5)])?;
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed ^ 0x5eed);
    let pairs: Vec<_> = (0..4).map(|_| (random_configuration(4, &mut rng), random_configuration(4, &mut rng))).collect();
    for mix in [&sk, &mixed] {
        for cc in covariance_check(mix, 4, &pairs, 100_000, seed)? {
            c.check(
                (cc.estimate - cc.expected).abs() <= 3.0 * cc.stderr,
                format!(
                    "covariance, ξ = {:?}, R = {}: {:.4} ± {:.1e} vs Nξ(R) = {:.4}",
                    mix.coeffs(),
                    cc.overlap,
                    cc.estimate,
                    cc.stderr,
                    cc.expected
                ),
            );
        }
    }
    Ok(c)
}

fn criterion10(zero_temp: f64, seed: u64) -> Result<Criterion> {
    let mut c = Criterion::new(10, "fractional moments");
    let sk = MixtureSpec::sk(1.0);
    let field = FieldSpec::deterministic(0.5);
    let betas = [1.0, 2.0, 4.0, 8.0, 16.0, 32.0];
    for s in [0.25, 0.5, 0.75] {
        let est = fractional_moments_mc(&sk, &field, 10, s, &betas, 500, seed)?;
        let mono = est.windows(2).all(|w| w[1].value >= w[0].value - w[1].stderr.max(w[0].stderr));
        let vals: Vec<String> = est.iter().map(|e| format!("{:.4}", e.value)).collect();
        c.check(mono, format!("N = 10, s = {s}: β ↦ estimate [{}] nondecreasing", vals.join(", ")));
    }
    let limit_betas = [4.0, 8.0, 16.0, 32.0];
    let mut limits = Vec::new();
    for &b in &limit_betas {
        limits.push(fractional_moment_limit(&sk, &field, 0.5, b)?);
    }
    let gaps: Vec<f64> = limits.iter().map(|v| zero_temp - v).collect();
    c.check(
        limits.windows(2).all(|w| w[1] >= w[0]),
        format!("limits at β = 4, 8, 16, 32: {:.5}, {:.5}, {:.5}, {:.5} nondecreasing", limits[0], limits[1], limits[2], limits[3]),
    );
    let decreasing = gaps.windows(2).all(|w| w[1].abs() < w[0].abs());
    c.check(decreasing, format!("gaps to Λ(0.5)/0.5 = {zero_temp:.5} decreasing: {gaps:.4?}"));
    c.check(gaps[3].abs() <= 1e-2, format!("final gap {:.4} ≤ 1e-2", gaps[3]));
    let adjusted: Vec<String> =
        gaps.iter().zip(&limit_betas).map(|(g, b)| format!("{:.1e}", g - std::f64::consts::LN_2 / b)).collect();
    c.note(format!("gaps minus log(2)/β: {}", adjusted.join(", ")));
    Ok(c)
}

/// Runs criteria 1 to 10, calling `progress` as each one completes.
pub fn run(opts: &VerifyOptions, mut progress: impl FnMut(&Criterion)) -> Result<VerifyReport> {
    let t0 = Instant::now();
    let mut cfg = opts.curve.clone();
    cfg.sde.seed = opts.seed;
    let sk = MixtureSpec::sk(1.0);
    let mut out = Vec::new();
    let mut emit = |c: Criterion, out: &mut Vec<Criterion>| {
        progress(&c);
        out.push(c);
    };

    let (c1, closed) = criterion1(&sk)?;
    emit(c1, &mut out);

    let mut duality = Vec::new();
    for h in [0.0, 0.5] {
        for s in [0.0, 0.5, 1.0] {
            duality.push(duality_point(&sk, h, s, &cfg)?);
        }
    }
    let mixed = MixtureSpec::new(vec![(2, 1.0), (4, 0.5)])?;
    let mixed_gamma = GammaPath::new(0.0, vec![(0.0, 0.4), (0.5, 1.5), (0.8, 4.0)])?;
    let mixed_sol = solve_zero_temp(&mixed, &mixed_gamma, &PdeGrid::for_problem(&mixed, &FieldSpec::deterministic(0.5)))?;
    let finite_grid = PdeGrid::for_problem(&sk, &FieldSpec::deterministic(0.5));
    let finite_sol = solve_finite_temp(&sk, &GammaPath::constant(0.5, 2.0)?, 4.0, &finite_grid)?;
    let mut named: Vec<(String, &PdeSolution)> = vec![
        ("γ ≡ 0".into(), &closed),
        ("mixed (2, 4) three-step γ".into(), &mixed_sol),
        ("β = 4, γ ≡ 2".into(), &finite_sol),
    ];
    for p in &duality {
        named.push((format!("optimal γ, h = {}, s = {}", p.h, p.s), &p.sol));
    }
    emit(criterion2(&named), &mut out);
    emit(criterion3(&duality), &mut out);

    let h0 = lambda_curve(&sk, 0.0, &cfg)?;
    let h5 = lambda_curve(&sk, 0.5, &cfg)?;
    emit(criterion4(&[&h0, &h5]), &mut out);
    emit(criterion5(&sk, &[&h0, &h5], &cfg)?, &mut out);
    emit(criterion6(&duality), &mut out);
    emit(criterion7(&h0, &h5)?, &mut out);
    emit(criterion8(&h5, &h0), &mut out);

    let at_half = h5.points.iter().find(|p| (p.s - 0.5).abs() < 1e-12).map(|p| p.value);
    let v_half = match at_half {
        Some(v) => v,
        None => duality.iter().find(|p| p.h == 0.5 && p.s == 0.5).map(|p| p.inf_value).expect("duality point"),
    };
    emit(criterion9(0.5 * v_half, opts.seed)?, &mut out);
    emit(criterion10(v_half, opts.seed)?, &mut out);

    out.sort_by_key(|c| c.id);
    Ok(VerifyReport { criteria: out, seconds: t0.elapsed().as_secs_f64() })
}
