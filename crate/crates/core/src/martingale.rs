//! Monte Carlo for the optimally controlled diffusion
//! `dX = ξ''γ ∂_xΨ(t, X) dt + √ξ'' dW`, `X₀ = h`, and the martingale
//! `α_t = ∂_xΨ(t, X_t)` it carries.
//!
//! Steps use the exact Gaussian increment of `∫√ξ'' dW` over each interval
//! and the drift frozen at the left end point. The noise of every antithetic
//! pair comes from its own ChaCha stream, so results do not depend on how
//! the pairs are split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gamma::GammaPath;
use crate::mixture::MixtureSpec;
use crate::pde::{PdeSolution, Terminal};

const PAIRS_PER_BATCH: usize = 512;
/// Fraction of escaped paths above which a simulation is rejected.
const MAX_ESCAPE_FRACTION: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SdeConfig {
    pub n_paths: usize,
    pub n_steps: usize,
    pub t_cut: f64,
    pub seed: u64,
}

impl Default for SdeConfig {
    fn default() -> Self {
        Self { n_paths: 100_000, n_steps: 1000, t_cut: 1.0 - 1e-4, seed: 0 }
    }
}

/// Times at which the constraint margins are reported.
pub fn margin_grid() -> Vec<f64> {
    (0..40).map(|i| i as f64 / 40.0).collect()
}

impl SdeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_paths < 2 || self.n_steps < 2 {
            return Err(Error::Invalid("need at least two paths and two steps".into()));
        }
        if !(self.t_cut > 0.0 && self.t_cut < 1.0) {
            return Err(Error::Invalid(format!("t_cut = {} must lie in (0, 1)", self.t_cut)));
        }
        Ok(())
    }

    /// Simulation times on `[0, t_cut]`: `1 − (1 − u)²` on a uniform `u`
    /// grid, merged with the knots of `γ` and the margin grid.
    pub fn time_grid(&self, gamma: &GammaPath) -> Vec<f64> {
        let n = self.n_steps;
        let mut t: Vec<f64> = (0..=n)
            .map(|k| 1.0 - (1.0 - k as f64 / n as f64).powi(2))
            .filter(|&t| t < self.t_cut)
            .chain(gamma.knot_times().filter(|&q| q < self.t_cut))
            .chain(margin_grid())
            .collect();
        t.push(self.t_cut);
        t.sort_by(f64::total_cmp);
        t.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        t
    }
}

/// Solves the zero-temperature PDE with a slice at every simulation time.
pub fn solve_for_simulation(mix: &MixtureSpec, gamma: &GammaPath, grid: &crate::pde::PdeGrid, cfg: &SdeConfig) -> Result<PdeSolution> {
    let grid = grid.clone().with_t_eval(cfg.time_grid(gamma));
    PdeSolution::solve(mix, gamma, &grid, Terminal::ZeroTemp)
}

/// Estimate with its Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MartingaleStats {
    pub h: f64,
    pub alpha0: f64,
    /// `E[hα₀ + α₁ ∫₀¹ √ξ'' dW]`.
    pub chi: Estimate,
    pub times: Vec<f64>,
    /// `E[α_t²]` on `times`; the last entry is `t = 1` where `α₁² = 1`.
    pub g_of_t: Vec<Estimate>,
    /// `∫₀¹ ξ''(t)(E[α_t²] − t) dt`.
    pub balance_integral: Estimate,
    pub r_grid: Vec<f64>,
    /// `∫_r^1 ξ''(t)(E[α_t²] − t) dt` on `r_grid`.
    pub constraint_margins: Vec<Estimate>,
    /// Covariance of the `chi` and balance estimators.
    pub chi_balance_cov: f64,
    pub n_paths: usize,
    pub escaped: usize,
}

impl MartingaleStats {
    /// Statistics of a deterministic profile `g`, e.g. `α ≡ 1`.
    pub fn deterministic<G: Fn(f64) -> f64>(mix: &MixtureSpec, h: f64, alpha0: f64, chi: f64, g: G) -> Self {
        let gl = crate::quadrature::GaussLegendre::new(32);
        let r_grid = margin_grid();
        let margin = |r: f64| gl.integrate(r, 1.0, |t| mix.xi_second(t) * (g(t) - t));
        let exact = |value| Estimate { value, stderr: 0.0 };
        let times: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
        MartingaleStats {
            h,
            alpha0,
            chi: exact(chi),
            g_of_t: times.iter().map(|&t| exact(g(t))).collect(),
            times,
            balance_integral: exact(margin(0.0)),
            constraint_margins: r_grid.iter().map(|&r| exact(margin(r))).collect(),
            r_grid,
            chi_balance_cov: 0.0,
            n_paths: 0,
            escaped: 0,
        }
    }

    /// Interpolated `E[α_t²]`.
    pub fn g_at(&self, t: f64) -> f64 {
        let i = self.times.partition_point(|&a| a <= t).clamp(1, self.times.len() - 1);
        let (a, b) = (self.times[i - 1], self.times[i]);
        let u = ((t - a) / (b - a)).clamp(0.0, 1.0);
        (1.0 - u) * self.g_of_t[i - 1].value + u * self.g_of_t[i].value
    }
}

/// `chi + (s/2)·balance`, the un-inverted functional divided by `s`.
pub fn uninverted_value(stats: &MartingaleStats, s: f64) -> Estimate {
    combine(stats, 1.0, 0.5 * s)
}

/// `chi + s·balance`: the envelope derivative `Λ'(s)`.
pub fn envelope_derivative(stats: &MartingaleStats, s: f64) -> Estimate {
    combine(stats, 1.0, s)
}

fn combine(stats: &MartingaleStats, a: f64, b: f64) -> Estimate {
    let (c, bl) = (stats.chi, stats.balance_integral);
    let var = a * a * c.stderr * c.stderr + b * b * bl.stderr * bl.stderr + 2.0 * a * b * stats.chi_balance_cov;
    Estimate { value: a * c.value + b * bl.value, stderr: var.max(0.0).sqrt() }
}

pub fn balance(stats: &MartingaleStats) -> Estimate {
    stats.balance_integral
}

#[derive(Debug, Clone, Serialize)]
pub struct Feasibility {
    pub min_margin: Estimate,
    pub at_r: f64,
    /// Every margin is at least `−3·stderr`.
    pub feasible: bool,
}

pub fn check_feasibility(stats: &MartingaleStats) -> Feasibility {
    let (i, m) = stats
        .constraint_margins
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.value.total_cmp(&b.1.value))
        .expect("nonempty margin grid");
    let feasible = stats.constraint_margins.iter().all(|m| m.value >= -3.0 * m.stderr - 1e-12);
    Feasibility { min_margin: *m, at_r: stats.r_grid[i], feasible }
}

struct Simulator<'a> {
    sol: &'a PdeSolution,
    h: f64,
    times: Vec<f64>,
    slices: Vec<usize>,
    /// `ξ'(t_{k+1}) − ξ'(t_k)`.
    dxi: Vec<f64>,
    gam: Vec<f64>,
    /// Variance of `∫_{t_cut}^1 √ξ'' dW`.
    tail_var: f64,
    x_max: f64,
}

/// State of a batch of antithetic pairs; path `2p` uses the noise of pair
/// `p` and path `2p + 1` its negation.
struct Batch {
    x: Vec<f64>,
    alpha: Vec<f64>,
    alpha0: f64,
    /// `∫₀ᵗ √ξ'' dW`.
    integral: Vec<f64>,
    /// `∫₀ᵗ ξ'' α² dt`, trapezoid in `ξ'`.
    prefix: Vec<f64>,
    escaped: usize,
}

impl<'a> Simulator<'a> {
    fn new(mix: &MixtureSpec, h: f64, gamma: &GammaPath, sol: &'a PdeSolution, cfg: &SdeConfig) -> Result<Self> {
        cfg.validate()?;
        if sol.terminal() != Terminal::ZeroTemp {
            return Err(Error::Invalid("simulation needs the zero-temperature solution".into()));
        }
        if sol.mixture() != mix || sol.gamma().l1_distance(gamma) > 1e-12 {
            return Err(Error::Invalid("PDE solution was computed for a different mixture or γ".into()));
        }
        let times = cfg.time_grid(gamma);
        let slices = times.iter().map(|&t| sol.slice_index(t).ok_or(Error::MissingSlice(t))).collect::<Result<Vec<_>>>()?;
        let dxi = times.windows(2).map(|w| mix.xi_prime(w[1]) - mix.xi_prime(w[0])).collect();
        let gam = times.iter().map(|&t| gamma.value(t)).collect();
        let tail_var = mix.xi_prime(1.0) - mix.xi_prime(cfg.t_cut);
        Ok(Self { sol, h, times, slices, dxi, gam, tail_var, x_max: sol.x_max() })
    }

    /// Runs pairs `a..b` time step by time step, calling `visit(k, batch)`
    /// once time `t_k` is reached.
    fn run<V: FnMut(usize, &Batch)>(&self, seed: u64, a: usize, b: usize, mut visit: V) -> Batch {
        let m = 2 * (b - a);
        let mut rngs: Vec<ChaCha8Rng> = (a..b)
            .map(|p| {
                let mut r = ChaCha8Rng::seed_from_u64(seed);
                r.set_stream(p as u64);
                r
            })
            .collect();
        let alpha0 = self.sol.eval_at(self.slices[0], self.h).1;
        let mut st = Batch {
            x: vec![self.h; m],
            alpha: vec![alpha0; m],
            alpha0,
            integral: vec![0.0; m],
            prefix: vec![0.0; m],
            escaped: 0,
        };
        visit(0, &st);
        let mut outside = vec![false; m];
        for k in 0..self.times.len() - 1 {
            let (sd, dxi, gam) = (self.dxi[k].sqrt(), self.dxi[k], self.gam[k]);
            for (p, rng) in rngs.iter_mut().enumerate() {
                let z: f64 = StandardNormal.sample(rng);
                for (i, di) in [(2 * p, sd * z), (2 * p + 1, -sd * z)] {
                    st.x[i] += gam * st.alpha[i] * dxi + di;
                    st.integral[i] += di;
                }
            }
            let slice = self.slices[k + 1];
            for i in 0..m {
                let a_new = self.sol.eval_at(slice, st.x[i]).1.clamp(-1.0, 1.0);
                st.prefix[i] += 0.5 * (st.alpha[i] * st.alpha[i] + a_new * a_new) * dxi;
                st.alpha[i] = a_new;
                outside[i] |= st.x[i].abs() > self.x_max;
            }
            visit(k + 1, &st);
        }
        let sd = self.tail_var.sqrt();
        for (p, rng) in rngs.iter_mut().enumerate() {
            let z: f64 = StandardNormal.sample(rng);
            st.integral[2 * p] += sd * z;
            st.integral[2 * p + 1] -= sd * z;
        }
        st.escaped = outside.iter().filter(|&&o| o).count();
        st
    }
}

#[derive(Clone, Default)]
struct Moments {
    sum: f64,
    sq: f64,
}

impl Moments {
    fn push(&mut self, v: f64) {
        self.sum += v;
        self.sq += v * v;
    }

    fn merge(&mut self, o: &Moments) {
        self.sum += o.sum;
        self.sq += o.sq;
    }

    fn estimate(&self, n: f64) -> Estimate {
        let mean = self.sum / n;
        let var = ((self.sq / n - mean * mean) * n / (n - 1.0)).max(0.0);
        Estimate { value: mean, stderr: (var / n).sqrt() }
    }
}

#[derive(Clone)]
struct Acc {
    pairs: usize,
    chi: Moments,
    bal: Moments,
    /// Control variate `|h + ∫√ξ''dW| − E|h + ∫√ξ''dW|`.
    cv: Moments,
    /// Sums of `chi·bal`, `chi·cv`, `bal·cv`.
    cross: [f64; 3],
    g: Vec<Moments>,
    margins: Vec<Moments>,
    escaped: usize,
}

/// `E|h + σZ|`.
fn folded_normal_mean(h: f64, sigma: f64) -> f64 {
    use crate::quadrature::{normal_cdf, normal_pdf};
    2.0 * sigma * normal_pdf(h / sigma) + h * (1.0 - 2.0 * normal_cdf(-h / sigma))
}

/// `chi` corrected by the control variate with the fitted coefficient, and
/// its covariance with the balance estimator.
fn controlled(acc: &Acc, n: f64, bal_mean: f64) -> (Estimate, f64) {
    let mean = |m: &Moments| m.sum / n;
    let (my, mz) = (mean(&acc.chi), mean(&acc.cv));
    let cov = |sxy: f64, mx: f64, my: f64| (sxy / n - mx * my) * n / (n - 1.0);
    let var_y = cov(acc.chi.sq, my, my);
    let var_z = cov(acc.cv.sq, mz, mz);
    let c_yz = cov(acc.cross[1], my, mz);
    let c = if var_z > 0.0 { c_yz / var_z } else { 0.0 };
    let var_r = (var_y - 2.0 * c * c_yz + c * c * var_z).max(0.0);
    let c_rb = cov(acc.cross[0], my, bal_mean) - c * cov(acc.cross[2], mz, bal_mean);
    (Estimate { value: my - c * mz, stderr: (var_r / n).sqrt() }, c_rb / n)
}

pub fn simulate_optimal(mix: &MixtureSpec, h: f64, gamma: &GammaPath, sol: &PdeSolution, cfg: &SdeConfig) -> Result<MartingaleStats> {
    let sim = Simulator::new(mix, h, gamma, sol, cfg)?;
    let n = sim.times.len();
    let r_grid = margin_grid();
    let r_idx: Vec<usize> = r_grid
        .iter()
        .map(|&r| sim.times.iter().position(|&t| (t - r).abs() < 1e-12).expect("margin grid is in the time grid"))
        .collect();
    let theta1 = mix.theta(1.0);
    let cv_mean = folded_normal_mean(h, mix.xi_prime(1.0).sqrt());
    let n_pairs = cfg.n_paths.div_ceil(2);
    let batches: Vec<(usize, usize)> =
        (0..n_pairs).step_by(PAIRS_PER_BATCH).map(|a| (a, (a + PAIRS_PER_BATCH).min(n_pairs))).collect();
    let empty = Acc {
        pairs: 0,
        chi: Moments::default(),
        bal: Moments::default(),
        cv: Moments::default(),
        cross: [0.0; 3],
        g: vec![Moments::default(); n],
        margins: vec![Moments::default(); r_grid.len()],
        escaped: 0,
    };
    let parts: Vec<Acc> = batches
        .par_iter()
        .map(|&(a, b)| {
            let mut acc = empty.clone();
            let np = b - a;
            let mut at_r = vec![0.0; np * r_idx.len()];
            let st = sim.run(cfg.seed, a, b, |k, st| {
                for p in 0..np {
                    let (u, v) = (st.alpha[2 * p], st.alpha[2 * p + 1]);
                    acc.g[k].push(0.5 * (u * u + v * v));
                }
                if let Some(j) = r_idx.iter().position(|&i| i == k) {
                    for p in 0..np {
                        at_r[p * r_idx.len() + j] = 0.5 * (st.prefix[2 * p] + st.prefix[2 * p + 1]);
                    }
                }
            });
            acc.escaped = st.escaped;
            for p in 0..np {
                let path_chi = |i: usize| {
                    let x = st.x[i];
                    let alpha1 = if x > 0.0 { 1.0 } else if x < 0.0 { -1.0 } else { 0.0 };
                    sim.h * st.alpha0 + alpha1 * st.integral[i]
                };
                let chi = 0.5 * (path_chi(2 * p) + path_chi(2 * p + 1));
                let total_int = 0.5 * (st.prefix[2 * p] + st.prefix[2 * p + 1]) + sim.tail_var;
                let bal = total_int - theta1;
                let cv = 0.5 * ((sim.h + st.integral[2 * p]).abs() + (sim.h + st.integral[2 * p + 1]).abs()) - cv_mean;
                acc.chi.push(chi);
                acc.bal.push(bal);
                acc.cv.push(cv);
                acc.cross[0] += chi * bal;
                acc.cross[1] += chi * cv;
                acc.cross[2] += bal * cv;
                for (j, &r) in r_grid.iter().enumerate() {
                    let tail = total_int - at_r[p * r_idx.len() + j];
                    acc.margins[j].push(tail - (theta1 - mix.theta(r)));
                }
                acc.pairs += 1;
            }
            acc
        })
        .collect();
    let mut total = empty;
    for p in &parts {
        total.pairs += p.pairs;
        total.chi.merge(&p.chi);
        total.cv.merge(&p.cv);
        total.bal.merge(&p.bal);
        for (a, b) in total.cross.iter_mut().zip(&p.cross) {
            *a += b;
        }
        total.escaped += p.escaped;
        for (a, b) in total.g.iter_mut().zip(&p.g) {
            a.merge(b);
        }
        for (a, b) in total.margins.iter_mut().zip(&p.margins) {
            a.merge(b);
        }
    }
    let paths = 2 * total.pairs;
    if total.escaped as f64 > MAX_ESCAPE_FRACTION * paths as f64 {
        return Err(Error::PathEscape { escaped: total.escaped, total: paths });
    }
    let np = total.pairs as f64;
    let bal = total.bal.estimate(np);
    let (chi, cov) = controlled(&total, np, bal.value);
    let mut times = sim.times.clone();
    let mut g_of_t: Vec<Estimate> = total.g.iter().map(|m| m.estimate(np)).collect();
    times.push(1.0);
    g_of_t.push(Estimate { value: 1.0, stderr: 0.0 });
    Ok(MartingaleStats {
        h,
        alpha0: sol.eval_at(sim.slices[0], h).1,
        chi,
        times,
        g_of_t,
        balance_integral: bal,
        constraint_margins: total.margins.iter().map(|m| m.estimate(np)).collect(),
        r_grid,
        chi_balance_cov: cov,
        n_paths: paths,
        escaped: total.escaped,
    })
}

/// `(X_t, α_t)` at the requested times for the first `n_paths` paths,
/// using the same noise as [`simulate_optimal`].
pub fn sample_paths(
    mix: &MixtureSpec,
    h: f64,
    gamma: &GammaPath,
    sol: &PdeSolution,
    cfg: &SdeConfig,
    at: &[f64],
) -> Result<Vec<Vec<(f64, f64)>>> {
    let sim = Simulator::new(mix, h, gamma, sol, cfg)?;
    let n = sim.times.len();
    let idx: Vec<usize> = at
        .iter()
        .map(|&t| {
            let i = sim.times.partition_point(|&a| a < t - 1e-12);
            if i < n && (sim.times[i] - t).abs() < 1e-9 {
                Ok(i)
            } else {
                Err(Error::MissingSlice(t))
            }
        })
        .collect::<Result<_>>()?;
    let n_pairs = cfg.n_paths.div_ceil(2);
    let batches: Vec<(usize, usize)> =
        (0..n_pairs).step_by(PAIRS_PER_BATCH).map(|a| (a, (a + PAIRS_PER_BATCH).min(n_pairs))).collect();
    let out: Vec<Vec<Vec<(f64, f64)>>> = batches
        .par_iter()
        .map(|&(a, b)| {
            let mut rows = vec![Vec::with_capacity(idx.len()); 2 * (b - a)];
            sim.run(cfg.seed, a, b, |k, st| {
                for _ in idx.iter().filter(|&&i| i == k) {
                    for (row, (&x, &al)) in rows.iter_mut().zip(st.x.iter().zip(&st.alpha)) {
                        row.push((x, al));
                    }
                }
            });
            rows
        })
        .collect();
    Ok(out.into_iter().flatten().take(cfg.n_paths).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_martingale() {
        let mix = MixtureSpec::sk(1.0);
        let h = 0.3;
        let stats = MartingaleStats::deterministic(&mix, h, 1.0, h, |_| 1.0);
        assert!((stats.balance_integral.value - 1.0).abs() < 1e-12);
        for s in [0.0, 0.5, 2.0] {
            assert!((uninverted_value(&stats, s).value - (h + 0.5 * s)).abs() < 1e-12);
        }
        let f = check_feasibility(&stats);
        assert!(f.feasible && f.min_margin.value > 0.0);
        let zero = MartingaleStats::deterministic(&mix, 0.0, 0.0, 0.0, |_| 0.0);
        let f = check_feasibility(&zero);
        assert!(!f.feasible);
        assert!((f.min_margin.value + mix.theta(1.0)).abs() < 1e-12);
        assert_eq!(f.at_r, 0.0);
    }

    #[test]
    fn time_grid_contains_knots() {
        let g = GammaPath::new(0.0, vec![(0.0, 0.0), (0.3337, 1.0)]).unwrap();
        let cfg = SdeConfig { n_steps: 50, ..Default::default() };
        let t = cfg.time_grid(&g);
        assert!(t.contains(&0.3337) && t.contains(&0.5) && t[0] == 0.0);
        assert_eq!(*t.last().unwrap(), cfg.t_cut);
        assert!(t.windows(2).all(|w| w[0] < w[1]));
    }
}
