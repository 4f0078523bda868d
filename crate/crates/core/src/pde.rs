//! Backward solver for the Parisi PDE
//! `−∂_tΨ = ½ξ''(t)(∂²_xΨ + γ(t)(∂_xΨ)²)` with a step-function `γ`.
//!
//! On a step where `γ ≡ m`, Cole–Hopf gives
//! `Ψ(a, x) = (1/m) log E exp(mΨ(b, x + vZ))` with `v² = ξ'(b) − ξ'(a)`.
//! Mildly tilted steps use Gauss–Hermite quadrature re-centred on the
//! Laplace approximation of the tilted Gaussian. Once `m v² ∂²_xΨ` exceeds
//! `kappa_max` the tilted density is far from Gaussian and the step switches
//! to a trapezoid rule in `z` over the interpolated slice. Long steps are cut
//! into sub-steps ("anchors") whose variance is tied to the smoothness of
//! the slice they read from.
//!
//! Both terminal conditions are even, hence so is every slice; only
//! `x ≥ 0` is stored. At zero temperature the last step has a closed form,
//! which is used for every slice after the last knot.

use serde::{Deserialize, Serialize};
use std::f64::consts::SQRT_2;
use std::io::Write;

use crate::error::{Error, Result};
use crate::mixture::{FieldSpec, MixtureSpec};
use crate::quadrature::{log_cosh, log_normal_cdf, log_sum_exp, normal_pdf, GaussHermite};

pub use crate::gamma::GammaPath;

/// Below this tilt a step is treated as a plain heat-kernel average.
const M_TINY: f64 = 1e-7;
/// Hard cap on the local curvature ratio used to re-centre the quadrature.
const KAPPA_HARD: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Terminal {
    /// `Ψ(1, x) = |x|`.
    ZeroTemp,
    /// `Ψ(1, x) = (1/β) log cosh(βx)`.
    FiniteTemp(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PdeGrid {
    pub x_max: f64,
    /// Odd number of uniform grid points on `[−x_max, x_max]`.
    pub n_x: usize,
    pub quad_order: usize,
    /// Extra times at which slices are stored.
    pub t_eval: Vec<f64>,
    /// Last stored time before the terminal singularity at zero temperature.
    pub eps_sing: f64,
    /// Largest anchor spacing in `t`.
    pub dt_max: f64,
    /// Sub-step standard deviation relative to the smoothing width of the source slice.
    pub step_width: f64,
    /// Bound on `m v² max ∂²_xΨ` per sub-step.
    pub kappa_max: f64,
}

impl Default for PdeGrid {
    fn default() -> Self {
        Self {
            x_max: 12.0,
            n_x: 1201,
            quad_order: 32,
            t_eval: Vec::new(),
            eps_sing: 1e-4,
            dt_max: 0.05,
            step_width: 1.0,
            kappa_max: 0.5,
        }
    }
}

impl PdeGrid {
    /// Grid sized for a mixture and field with spacing about 0.02.
    pub fn for_problem(mix: &MixtureSpec, field: &FieldSpec) -> Self {
        let spread = (mix.xi_prime(1.0)).sqrt();
        let x_max = field.max_abs() + 9.0 * field.gaussian_var.sqrt() + 7.0 * spread + 2.0;
        let x_max = (x_max * 2.0).ceil() / 2.0;
        let n_half = (x_max / 0.02).round() as usize;
        Self { x_max, n_x: 2 * n_half + 1, ..Self::default() }
    }

    pub fn with_t_eval(mut self, t_eval: Vec<f64>) -> Self {
        self.t_eval = t_eval;
        self
    }

    /// Doubles the resolution in both `x` and the quadrature order.
    pub fn refined(&self) -> Self {
        Self { n_x: 2 * self.n_x - 1, quad_order: 2 * self.quad_order, ..self.clone() }
    }

    /// Extends `x_max` at fixed `dx` so the controlled diffusion, whose drift
    /// is at most `ξ''γ`, stays inside the grid.
    pub fn widened_for_drift(&self, mix: &MixtureSpec, gamma: &GammaPath) -> Self {
        let drift: f64 = gamma.intervals().map(|(a, b, m)| m * (mix.xi_prime(b) - mix.xi_prime(a))).sum();
        let need = self.x_max + drift;
        if drift <= 0.0 {
            return self.clone();
        }
        let dx = self.dx();
        let n_half = (need / dx).ceil() as usize;
        Self { x_max: n_half as f64 * dx, n_x: 2 * n_half + 1, ..self.clone() }
    }

    pub fn dx(&self) -> f64 {
        self.x_max / ((self.n_x - 1) / 2) as f64
    }

    pub fn validate(&self, mix: &MixtureSpec, field: &FieldSpec) -> Result<()> {
        let bad = |m: String| Err(Error::Grid(m));
        if self.n_x < 5 || self.n_x.is_multiple_of(2) {
            return bad(format!("n_x = {} must be odd and at least 5", self.n_x));
        }
        if self.quad_order < 20 {
            return bad(format!("quad_order = {} must be at least 20", self.quad_order));
        }
        let need = field.max_abs() + 6.0 * mix.xi_prime(1.0).sqrt();
        if !(self.x_max >= need) {
            return bad(format!("x_max = {} below |h| + 6 sqrt(xi'(1)) = {need:.4}", self.x_max));
        }
        if !(self.eps_sing > 0.0 && self.eps_sing < 0.5) {
            return bad(format!("eps_sing = {} must lie in (0, 0.5)", self.eps_sing));
        }
        if !(self.dt_max > 0.0) || !(self.step_width > 0.0) {
            return bad("dt_max and step_width must be positive".into());
        }
        if !(self.kappa_max > 0.0 && self.kappa_max < KAPPA_HARD) {
            return bad(format!("kappa_max must lie in (0, {KAPPA_HARD})"));
        }
        if self.t_eval.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return bad("t_eval entries must lie in [0, 1]".into());
        }
        Ok(())
    }
}

/// Value and derivatives at one point. `psi_xx` is `None` on the singular
/// zero-temperature terminal slice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdePoint {
    pub psi: f64,
    pub psi_x: f64,
    pub psi_xx: Option<f64>,
}

#[derive(Debug, Clone, Copy)]
enum Exact {
    Grid,
    /// Zero-temperature closed form with tilt `m` and remaining variance `v2`.
    LastStep { m: f64, v2: f64 },
    Terminal,
}

#[derive(Debug, Clone)]
struct Slice {
    t: f64,
    exact: Exact,
    psi: Vec<f64>,
    psi_x: Vec<f64>,
    psi_xx: Option<Vec<f64>>,
    /// `max ∂²_xΨ` over the grid, infinite on the singular terminal.
    curv: f64,
    anchor: bool,
}

/// Quadrature rule of one step.
#[derive(Debug, Clone, Copy)]
enum Rule {
    /// Gauss–Hermite re-centred at the Laplace point of the tilted Gaussian.
    Hermite,
    /// Trapezoid in `z` on `[−kmax·hz, kmax·hz]`; with `aligned` the nodes
    /// `x + v z` fall on grid points. Used when the tilted kernel may be
    /// bimodal.
    Trapezoid { hz: f64, kmax: usize, aligned: bool },
}

impl Rule {
    fn count(&self, q: usize) -> usize {
        match *self {
            Rule::Hermite => q,
            Rule::Trapezoid { kmax, .. } => 2 * kmax + 1,
        }
    }
}

/// Nodes and tilted weights of one anchor step, per grid point `x ≥ 0`.
#[derive(Debug, Clone)]
struct StepCache {
    v: f64,
    rule: Rule,
    mu: Vec<f64>,
    sigma: Vec<f64>,
    weights: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct PdeSolution {
    mixture: MixtureSpec,
    gamma: GammaPath,
    terminal: Terminal,
    grid: PdeGrid,
    dx: f64,
    n_half: usize,
    gh: GaussHermite,
    slices: Vec<Slice>,
    /// `caches[k]` moves the law from anchor `k` to anchor `k + 1`.
    caches: Vec<Option<StepCache>>,
    anchor_idx: Vec<usize>,
}

/// `(ψ, ψ_x, ψ_xx)` of the zero-temperature last step at `x`.
pub fn last_step_closed_form(m: f64, v2: f64, x: f64) -> (f64, f64, f64) {
    let v = v2.sqrt();
    if m < M_TINY {
        let r = x / v;
        let pdf = normal_pdf(r);
        let erf = libm::erf(r / SQRT_2);
        return (2.0 * v * pdf + x * erf, erf, 2.0 * pdf / v);
    }
    let mv2 = m * v2;
    let log_a = m * x + log_normal_cdf((x + mv2) / v);
    let log_b = -m * x + log_normal_cdf((-x + mv2) / v);
    let lse = log_sum_exp(log_a, log_b);
    let psi = lse / m + 0.5 * mv2;
    let psi_x = (0.5 * (log_a - log_b)).tanh();
    let log_c = -0.5 * x * x / v2 - 0.5 * m * mv2 - v.ln() - crate::quadrature::LN_SQRT_2PI;
    let psi_xx = m * (1.0 - psi_x * psi_x) + 2.0 * (log_c - lse).exp();
    (psi, psi_x, psi_xx)
}

/// `(1/β) log cosh(βx)` and its first two derivatives.
pub fn finite_terminal(beta: f64, x: f64) -> (f64, f64, f64) {
    let th = (beta * x).tanh();
    (log_cosh(beta * x) / beta, th, beta * (1.0 - th * th))
}

pub fn solve_zero_temp(mix: &MixtureSpec, gamma: &GammaPath, grid: &PdeGrid) -> Result<PdeSolution> {
    PdeSolution::solve(mix, gamma, grid, Terminal::ZeroTemp)
}

/// `γ` must satisfy `γ ≤ β`; the jump to `β` at `t = 1` is implicit.
pub fn solve_finite_temp(
    mix: &MixtureSpec,
    gamma: &GammaPath,
    beta: f64,
    grid: &PdeGrid,
) -> Result<PdeSolution> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::Invalid(format!("beta = {beta} must be positive")));
    }
    if beta < gamma.s_floor() {
        return Err(Error::Invalid(format!("beta = {beta} below the floor {}", gamma.s_floor())));
    }
    if gamma.last_value() > beta * (1.0 + 1e-12) {
        return Err(Error::Gamma(format!(
            "gamma reaches {} above beta = {beta}",
            gamma.last_value()
        )));
    }
    PdeSolution::solve(mix, gamma, grid, Terminal::FiniteTemp(beta))
}

impl PdeSolution {
    pub fn solve(mix: &MixtureSpec, gamma: &GammaPath, grid: &PdeGrid, terminal: Terminal) -> Result<Self> {
        if grid.n_x < 5 || grid.n_x.is_multiple_of(2) || grid.quad_order < 20 {
            return Err(Error::Grid(format!(
                "n_x = {} (odd, ≥ 5) and quad_order = {} (≥ 20)",
                grid.n_x, grid.quad_order
            )));
        }
        let grid = grid.widened_for_drift(mix, gamma);
        let n_half = (grid.n_x - 1) / 2;
        let mut sol = PdeSolution {
            mixture: mix.clone(),
            gamma: gamma.clone(),
            terminal,
            dx: grid.x_max / n_half as f64,
            gh: GaussHermite::new(grid.quad_order),
            grid,
            n_half,
            slices: Vec::new(),
            caches: Vec::new(),
            anchor_idx: Vec::new(),
        };
        sol.sweep()?;
        sol.check_boundary()?;
        Ok(sol)
    }

    fn xs(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.n_half).map(move |i| i as f64 * self.dx)
    }

    fn make_slice(t: f64, exact: Exact, psi: Vec<f64>, psi_x: Vec<f64>, psi_xx: Option<Vec<f64>>, anchor: bool) -> Slice {
        let curv = psi_xx.as_ref().map_or(f64::INFINITY, |v| v.iter().copied().fold(0.0, f64::max));
        Slice { t, exact, psi, psi_x, psi_xx, curv, anchor }
    }

    fn terminal_slice(&self) -> Slice {
        match self.terminal {
            Terminal::ZeroTemp => {
                let psi: Vec<f64> = self.xs().collect();
                let mut psi_x = vec![1.0; self.n_half + 1];
                psi_x[0] = 0.0;
                Self::make_slice(1.0, Exact::Terminal, psi, psi_x, None, true)
            }
            Terminal::FiniteTemp(beta) => {
                let (a, b, c) = self.tabulate(|x| finite_terminal(beta, x));
                Self::make_slice(1.0, Exact::Terminal, a, b, Some(c), true)
            }
        }
    }

    fn tabulate<F: Fn(f64) -> (f64, f64, f64)>(&self, f: F) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = self.n_half + 1;
        let (mut a, mut b, mut c) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        for x in self.xs() {
            let (p, px, pxx) = f(x);
            a.push(p);
            b.push(px);
            c.push(pxx);
        }
        (a, b, c)
    }

    fn closed_form_slice(&self, t: f64, anchor: bool) -> Slice {
        let m = self.gamma.last_value();
        let v2 = self.mixture.xi_prime(1.0) - self.mixture.xi_prime(t);
        let (a, b, c) = self.tabulate(|x| last_step_closed_form(m, v2, x));
        Self::make_slice(t, Exact::LastStep { m, v2 }, a, b, Some(c), anchor)
    }

    fn in_closed_form_region(&self, t: f64) -> bool {
        matches!(self.terminal, Terminal::ZeroTemp) && t >= self.gamma.last_knot() && t < 1.0
    }

    /// Smoothing width squared of the slice at `t`.
    fn width2(&self, t: f64) -> f64 {
        let w2 = self.mixture.xi_prime(1.0) - self.mixture.xi_prime(t);
        match self.terminal {
            Terminal::ZeroTemp => w2,
            Terminal::FiniteTemp(beta) => w2 + 1.0 / (beta * beta),
        }
    }

    /// First anchor below `t = 1` at zero temperature: the last slice whose
    /// features are still resolved by the grid.
    fn zero_temp_first_anchor(&self) -> f64 {
        let mix = &self.mixture;
        let w2 = (9.0 * self.dx * self.dx).max(mix.xi_prime(1.0) - mix.xi_prime(1.0 - self.grid.eps_sing));
        mix.xi_prime_inverse(mix.xi_prime(1.0) - w2).min(1.0 - self.grid.eps_sing)
    }

    fn choose_rule(&self, src: &Slice, v: f64, m: f64) -> Rule {
        if m < M_TINY || m * v * v * src.curv <= self.grid.kappa_max {
            return Rule::Hermite;
        }
        const HZ_MAX: f64 = 0.25;
        let aligned = v * HZ_MAX >= self.dx;
        let hz = if aligned { self.dx / v } else { HZ_MAX };
        let kmax = ((m * v + 9.0) / hz).ceil() as usize;
        Rule::Trapezoid { hz, kmax, aligned }
    }

    fn sweep(&mut self) -> Result<()> {
        let mut chain = vec![self.terminal_slice()];
        let mut caches: Vec<Option<StepCache>> = Vec::new();
        let knots: Vec<f64> = self.gamma.knot_times().collect();
        let zero_temp = matches!(self.terminal, Terminal::ZeroTemp);
        let mut t_b = 1.0;
        while t_b > 0.0 {
            let k = knots.partition_point(|&q| q < t_b) - 1;
            let q_lo = knots[k];
            let m = self.gamma.knots()[k].1;
            let t_a = if zero_temp && t_b == 1.0 {
                self.zero_temp_first_anchor().max(q_lo)
            } else {
                let v2max = self.grid.step_width.powi(2) * self.width2(t_b);
                let target = self.mixture.xi_prime(t_b) - v2max;
                let mut t_a = self.mixture.xi_prime_inverse(target).max(t_b - self.grid.dt_max).max(q_lo);
                // avoid a sliver next to the knot
                if t_a - q_lo < 1e-3 * (t_b - q_lo) {
                    t_a = q_lo;
                }
                t_a
            };
            let src = chain.last().expect("chain is never empty");
            let slice = if self.in_closed_form_region(t_a) {
                let cache = if t_b < 1.0 { self.grid_step(src, t_a, t_b, m, true).1 } else { None };
                caches.push(cache);
                self.closed_form_slice(t_a, true)
            } else {
                let (s, cache) = self.grid_step(src, t_a, t_b, m, true);
                caches.push(cache);
                s
            };
            if slice.psi.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!("non-finite slice at t = {t_a}")));
            }
            if chain.len() > 20_000 {
                return Err(Error::Numerical(format!("anchor sweep stalled at t = {t_a}")));
            }
            chain.push(slice);
            t_b = t_a;
        }
        chain.reverse();
        caches.reverse();

        let anchors_t: Vec<f64> = chain.iter().map(|s| s.t).collect();
        let mut wanted = self.grid.t_eval.clone();
        if zero_temp {
            wanted.push(1.0 - self.grid.eps_sing);
        }
        let mut extra: Vec<Slice> = Vec::new();
        for t in wanted {
            if anchors_t.iter().chain(extra.iter().map(|s| &s.t)).any(|&a| (a - t).abs() <= 1e-12) {
                continue;
            }
            if self.in_closed_form_region(t) {
                extra.push(self.closed_form_slice(t, false));
                continue;
            }
            let b = anchors_t.partition_point(|&a| a <= t);
            let m = self.gamma.value(t);
            let (s, _) = self.grid_step(&chain[b], t, anchors_t[b], m, false);
            extra.push(s);
        }

        let mut all: Vec<Slice> = chain.into_iter().chain(extra).collect();
        all.sort_by(|a, b| a.t.total_cmp(&b.t));
        self.anchor_idx = all.iter().enumerate().filter(|(_, s)| s.anchor).map(|(i, _)| i).collect();
        self.slices = all;
        self.caches = caches;
        Ok(())
    }

    /// Evaluates a slice at any `y`, extending linearly beyond `x_max`.
    #[inline]
    fn eval_slice(&self, s: &Slice, y: f64) -> (f64, f64, f64) {
        let a = y.abs();
        let sign = if y < 0.0 { -1.0 } else { 1.0 };
        match s.exact {
            Exact::LastStep { m, v2 } => {
                let (p, px, pxx) = last_step_closed_form(m, v2, a);
                return (p, sign * px, pxx);
            }
            Exact::Terminal => {
                return match self.terminal {
                    Terminal::ZeroTemp => (a, if y == 0.0 { 0.0 } else { sign }, 0.0),
                    Terminal::FiniteTemp(beta) => {
                        let (p, px, pxx) = finite_terminal(beta, a);
                        (p, sign * px, pxx)
                    }
                };
            }
            Exact::Grid => {}
        }
        self.eval_grid(s, y)
    }

    /// Cubic Hermite interpolation of the stored arrays.
    #[inline]
    fn eval_grid(&self, s: &Slice, y: f64) -> (f64, f64, f64) {
        let a = y.abs();
        let sign = if y < 0.0 { -1.0 } else { 1.0 };
        let n = self.n_half;
        if a >= self.grid.x_max {
            let slope = s.psi_x[n];
            return (s.psi[n] + slope * (a - self.grid.x_max), sign * slope, 0.0);
        }
        let r = a / self.dx;
        let i = (r as usize).min(n - 1);
        let u = r - i as f64;
        let u2 = u * u;
        let um = 1.0 - u;
        let h00 = (1.0 + 2.0 * u) * um * um;
        let h10 = u * um * um;
        let h01 = u2 * (3.0 - 2.0 * u);
        let h11 = -u2 * um;
        let dx = self.dx;
        let psi = h00 * s.psi[i] + h10 * dx * s.psi_x[i] + h01 * s.psi[i + 1] + h11 * dx * s.psi_x[i + 1];
        let (px, pxx) = match &s.psi_xx {
            Some(xx) => {
                let px = h00 * s.psi_x[i] + h10 * dx * xx[i] + h01 * s.psi_x[i + 1] + h11 * dx * xx[i + 1];
                (px, um * xx[i] + u * xx[i + 1])
            }
            None => (um * s.psi_x[i] + u * s.psi_x[i + 1], 0.0),
        };
        (psi, sign * px.clamp(0.0, 1.0), pxx.max(0.0))
    }

    /// Slice values at the signed grid index `idx`.
    #[inline]
    fn node_value(&self, s: &Slice, idx: isize) -> (f64, f64, f64) {
        let a = idx.unsigned_abs();
        if a > self.n_half {
            return self.eval_slice(s, idx as f64 * self.dx);
        }
        let sign = if idx < 0 { -1.0 } else { 1.0 };
        let pxx = s.psi_xx.as_ref().map_or(0.0, |v| v[a]);
        (s.psi[a], sign * s.psi_x[a], pxx)
    }

    /// One Cole–Hopf step evaluated at `x ≥ 0` (grid index `at` when `x` is
    /// a grid point). Leaves the normalised tilted weights in `lw` and returns
    /// `(ψ, ψ_x, ψ_xx, μ, σ)`.
    #[allow(clippy::too_many_arguments)]
    fn point_step(
        &self,
        src: &Slice,
        x: f64,
        at: Option<usize>,
        v: f64,
        m: f64,
        rule: Rule,
        lw: &mut Vec<f64>,
        vals: &mut Vec<(f64, f64, f64)>,
    ) -> [f64; 5] {
        let (p0, px0, pxx0) = match at {
            Some(i) => self.node_value(src, i as isize),
            None => self.eval_slice(src, x),
        };
        lw.clear();
        vals.clear();
        let tilted = m >= M_TINY;
        let (mu, sigma) = match rule {
            Rule::Hermite => {
                let (mu, sigma) = if tilted {
                    let kappa = (m * v * v * pxx0).min(KAPPA_HARD);
                    (m * v * px0 / (1.0 - kappa), 1.0 / (1.0 - kappa).sqrt())
                } else {
                    (0.0, 1.0)
                };
                let ln_sigma = sigma.ln();
                for j in 0..self.gh.len() {
                    let u = self.gh.nodes[j];
                    let z = mu + sigma * u;
                    let e = self.eval_slice(src, x + v * z);
                    vals.push(e);
                    let tilt = if tilted { m * (e.0 - p0) } else { 0.0 };
                    lw.push(self.gh.log_weights[j] + ln_sigma + 0.5 * (u * u - z * z) + tilt);
                }
                (mu, sigma)
            }
            Rule::Trapezoid { hz, kmax, aligned } => {
                let base = hz.ln() - crate::quadrature::LN_SQRT_2PI;
                let k0 = kmax as isize;
                for k in -k0..=k0 {
                    let z = k as f64 * hz;
                    let e = match (aligned, at) {
                        (true, Some(i)) => self.node_value(src, i as isize + k),
                        _ => self.eval_slice(src, x + v * z),
                    };
                    vals.push(e);
                    lw.push(base - 0.5 * z * z + m * (e.0 - p0));
                }
                (0.0, 1.0)
            }
        };
        let lse = crate::quadrature::log_sum_exp_slice(lw);
        let (mut e_p, mut e_px, mut e_px2, mut e_pxx) = (0.0, 0.0, 0.0, 0.0);
        for (w, &(p, px, pxx)) in lw.iter_mut().zip(vals.iter()) {
            *w = (*w - lse).exp();
            e_p += *w * p;
            e_px += *w * px;
            e_px2 += *w * px * px;
            e_pxx += *w * pxx;
        }
        let psi = if tilted { p0 + lse / m } else { e_p };
        let psi_xx = if tilted { m * (e_px2 - e_px * e_px).max(0.0) } else { 0.0 } + e_pxx;
        [psi, e_px.clamp(-1.0, 1.0), psi_xx, mu, sigma]
    }

    fn grid_step(&self, src: &Slice, t_a: f64, t_b: f64, m: f64, keep: bool) -> (Slice, Option<StepCache>) {
        let v = (self.mixture.xi_prime(t_b) - self.mixture.xi_prime(t_a)).max(0.0).sqrt();
        let rule = self.choose_rule(src, v, m);
        let n = self.n_half + 1;
        let count = rule.count(self.gh.len());
        let mut psi = Vec::with_capacity(n);
        let mut psi_x = Vec::with_capacity(n);
        let mut psi_xx = Vec::with_capacity(n);
        let mut cache = keep.then(|| StepCache {
            v,
            rule,
            mu: Vec::with_capacity(n),
            sigma: Vec::with_capacity(n),
            weights: Vec::with_capacity(n * count),
        });
        let mut lw = Vec::with_capacity(count);
        let mut vals = Vec::with_capacity(count);
        for i in 0..n {
            let x = i as f64 * self.dx;
            let [p, px, pxx, mu, sigma] = self.point_step(src, x, Some(i), v, m, rule, &mut lw, &mut vals);
            psi.push(p);
            psi_x.push(if i == 0 { 0.0 } else { px.max(0.0) });
            psi_xx.push(pxx);
            if let Some(c) = cache.as_mut() {
                c.mu.push(mu);
                c.sigma.push(sigma);
                c.weights.extend_from_slice(&lw);
            }
        }
        (Self::make_slice(t_a, Exact::Grid, psi, psi_x, Some(psi_xx), keep), cache)
    }

    fn check_boundary(&self) -> Result<()> {
        let s = &self.slices[0];
        let slope = s.psi_x[self.n_half];
        if 1.0 - slope > 1e-3 {
            return Err(Error::Grid(format!(
                "x_max = {} too small: boundary slope {slope:.6} deviates from the |x| asymptote",
                self.grid.x_max
            )));
        }
        Ok(())
    }

    pub fn mixture(&self) -> &MixtureSpec {
        &self.mixture
    }

    pub fn gamma(&self) -> &GammaPath {
        &self.gamma
    }

    pub fn terminal(&self) -> Terminal {
        self.terminal
    }

    pub fn grid(&self) -> &PdeGrid {
        &self.grid
    }

    pub fn x_max(&self) -> f64 {
        self.grid.x_max
    }

    pub fn slice_times(&self) -> Vec<f64> {
        self.slices.iter().map(|s| s.t).collect()
    }

    pub fn anchor_times(&self) -> Vec<f64> {
        self.anchor_idx.iter().map(|&i| self.slices[i].t).collect()
    }

    /// Index of the stored slice within 1e-9 of `t`.
    pub fn slice_index(&self, t: f64) -> Option<usize> {
        let i = self.slices.partition_point(|s| s.t < t - 1e-9);
        (i < self.slices.len() && (self.slices[i].t - t).abs() <= 1e-9).then_some(i)
    }

    /// Fast evaluation on a known slice; no domain check, linear beyond `x_max`.
    #[inline]
    pub fn eval_at(&self, slice: usize, x: f64) -> (f64, f64, f64) {
        let s = &self.slices[slice];
        match s.exact {
            // the tabulated closed form is accurate once it spans several cells
            Exact::LastStep { v2, .. } if v2 >= 64.0 * self.dx * self.dx => self.eval_grid(s, x),
            _ => self.eval_slice(s, x),
        }
    }

    pub fn evaluate(&self, t: f64, x: f64) -> Result<PdePoint> {
        let i = self.slice_index(t).ok_or(Error::MissingSlice(t))?;
        if !(x.abs() <= self.grid.x_max) {
            return Err(Error::OutOfDomain { t, x });
        }
        let s = &self.slices[i];
        let (psi, psi_x, psi_xx) = self.eval_slice(s, x);
        let singular = matches!((s.exact, self.terminal), (Exact::Terminal, Terminal::ZeroTemp));
        Ok(PdePoint { psi, psi_x: psi_x.clamp(-1.0, 1.0), psi_xx: (!singular).then_some(psi_xx) })
    }

    /// `Ψ(0, x)` and derivatives, with the asymptotic extension outside the grid.
    pub fn at_zero(&self, x: f64) -> (f64, f64, f64) {
        self.eval_slice(&self.slices[0], x)
    }

    /// Full symmetric arrays of the slice at index `i`: `(x, ψ, ψ_x, ψ_xx)`.
    pub fn slice_arrays(&self, i: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>, Option<Vec<f64>>) {
        let s = &self.slices[i];
        let n = self.n_half;
        let mut xs = Vec::with_capacity(2 * n + 1);
        let mut p = Vec::with_capacity(2 * n + 1);
        let mut px = Vec::with_capacity(2 * n + 1);
        let mut pxx = s.psi_xx.as_ref().map(|_| Vec::with_capacity(2 * n + 1));
        for k in 0..=2 * n {
            let j = k.abs_diff(n);
            let sign = if k < n { -1.0 } else { 1.0 };
            xs.push(sign * j as f64 * self.dx);
            p.push(s.psi[j]);
            px.push(sign * s.psi_x[j]);
            if let (Some(out), Some(src)) = (pxx.as_mut(), s.psi_xx.as_ref()) {
                out.push(src[j]);
            }
        }
        (xs, p, px, pxx)
    }

    pub fn max_abs_psi_x(&self) -> f64 {
        self.slices.iter().flat_map(|s| s.psi_x.iter()).fold(0.0, |a, v| a.max(v.abs()))
    }

    /// Writes `t,x,psi,psi_x` rows for every stored slice, keeping every
    /// `every`-th grid point.
    pub fn write_csv<W: Write>(&self, mut w: W, every: usize) -> std::io::Result<()> {
        writeln!(w, "t,x,psi,psi_x")?;
        for i in 0..self.slices.len() {
            let (xs, p, px, _) = self.slice_arrays(i);
            for k in (0..xs.len()).step_by(every.max(1)) {
                writeln!(w, "{},{},{},{}", self.slices[i].t, xs[k], p[k], px[k])?;
            }
        }
        Ok(())
    }

    /// Propagates the law of the optimally controlled diffusion forward
    /// through the anchors, starting from the atoms `(x, p)` at `t = 0`, and
    /// records `g(t) = E[∂_xΨ(t, X_t)²]` and `g'(t) = ξ''(t) E[(∂²_xΨ)²]`.
    ///
    /// The transition between anchors is the Doob transform of the heat
    /// kernel by `exp(mΨ)`, which is exactly the tilted quadrature measure of
    /// the backward step. Mass is deposited on the grid with quadratic
    /// weights that keep the first two moments.
    pub fn second_moment(&self, init: &[(f64, f64)]) -> Result<SecondMoment> {
        let n = self.n_half;
        let width = 2 * n + 1;
        let q = self.gh.len();
        let anchors = &self.anchor_idx;
        let zero_temp = matches!(self.terminal, Terminal::ZeroTemp);
        let mut times = Vec::with_capacity(anchors.len());
        let mut g = Vec::with_capacity(anchors.len());
        let mut gp = Vec::with_capacity(anchors.len());
        let mut tail = None;
        let mut leaked = 0.0;

        let s0 = &self.slices[anchors[0]];
        let (mut g0, mut h0) = (0.0, 0.0);
        for &(x, p) in init {
            let (_, px, pxx) = self.eval_slice(s0, x);
            g0 += p * px * px;
            h0 += p * pxx * pxx;
        }
        times.push(0.0);
        g.push(g0);
        gp.push(self.mixture.xi_second(0.0) * h0);

        let mut law = vec![0.0; width];
        {
            let s1 = &self.slices[anchors[1]];
            let v = self.mixture.xi_prime(s1.t).sqrt();
            let m = self.gamma.value(0.0);
            let rule = match self.caches[0].as_ref().map(|c| c.rule) {
                Some(Rule::Trapezoid { hz, kmax, .. }) => Rule::Trapezoid { hz, kmax, aligned: false },
                _ => self.choose_rule(s1, v, m),
            };
            let mut lw = Vec::new();
            let mut vals = Vec::new();
            for &(x, p) in init {
                let a = x.abs();
                let sign = if x < 0.0 { -1.0 } else { 1.0 };
                let [_, _, _, mu, sigma] = self.point_step(s1, a, None, v, m, rule, &mut lw, &mut vals);
                for (j, &w) in lw.iter().enumerate() {
                    let y = sign * (a + v * self.node(rule, mu, sigma, j));
                    leaked += self.deposit(&mut law, y, p * w);
                }
            }
        }

        for k in 1..anchors.len() {
            let s = &self.slices[anchors[k]];
            let (mut gk, mut hk) = (0.0, 0.0);
            for (idx, &p) in law.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                let j = idx.abs_diff(n);
                let px = s.psi_x[j];
                gk += p * px * px;
                if let Some(xx) = &s.psi_xx {
                    hk += p * xx[j] * xx[j];
                }
            }
            times.push(s.t);
            g.push(gk);
            gp.push(self.mixture.xi_second(s.t) * hk);
            if k + 1 == anchors.len() {
                break;
            }
            if k + 2 == anchors.len() && zero_temp {
                // α₁ = sign(X₁); g(t) ≈ 1 − c·sqrt(ξ'(1) − ξ'(t)) as t → 1
                let w2 = self.mixture.xi_prime(1.0) - self.mixture.xi_prime(s.t);
                tail = Some((s.t, gk, w2));
                times.push(1.0);
                g.push(1.0);
                gp.push(f64::NAN);
                break;
            }
            let Some(cache) = &self.caches[k] else {
                return Err(Error::Numerical(format!("no transition cached at anchor t = {}", s.t)));
            };
            let count = cache.rule.count(q);
            let mut next = vec![0.0; width];
            for (idx, &p) in law.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                let i = idx.abs_diff(n);
                let sign = if idx < n { -1.0 } else { 1.0 };
                let x = i as f64 * self.dx;
                let w = &cache.weights[i * count..(i + 1) * count];
                for (j, &wj) in w.iter().enumerate() {
                    let y = sign * (x + cache.v * self.node(cache.rule, cache.mu[i], cache.sigma[i], j));
                    leaked += self.deposit(&mut next, y, p * wj);
                }
            }
            law = next;
        }
        Ok(SecondMoment { mixture: self.mixture.clone(), times, g, g_prime: gp, tail, leaked })
    }

    #[inline]
    fn node(&self, rule: Rule, mu: f64, sigma: f64, j: usize) -> f64 {
        match rule {
            Rule::Hermite => mu + sigma * self.gh.nodes[j],
            Rule::Trapezoid { hz, kmax, .. } => (j as f64 - kmax as f64) * hz,
        }
    }

    /// Quadratic, moment-preserving deposit; returns mass pushed to the edge.
    #[inline]
    fn deposit(&self, law: &mut [f64], y: f64, mass: f64) -> f64 {
        let n = self.n_half as f64;
        let r = y / self.dx;
        let (r, leak) = if r.abs() > n - 1.0 { (r.clamp(1.0 - n, n - 1.0), mass.abs()) } else { (r, 0.0) };
        let c = r.round();
        let u = r - c;
        let i = (c + n) as usize;
        law[i - 1] += mass * 0.5 * u * (u - 1.0);
        law[i] += mass * (1.0 - u * u);
        law[i + 1] += mass * 0.5 * u * (u + 1.0);
        leak
    }
}

/// The curve `g(t) = E[α_t²]` on the anchor times, interpolated by cubic
/// Hermite splines using `g' = ξ'' E[(∂²_xΨ)²]`. At zero temperature the
/// last segment follows `1 − c·sqrt(ξ'(1) − ξ'(t))`.
#[derive(Debug, Clone)]
pub struct SecondMoment {
    mixture: MixtureSpec,
    pub times: Vec<f64>,
    pub g: Vec<f64>,
    pub g_prime: Vec<f64>,
    tail: Option<(f64, f64, f64)>,
    /// Probability mass that reached the edge of the grid.
    pub leaked: f64,
}

const GL8: ([f64; 4], [f64; 4]) = (
    [0.183_434_642_495_649_8, 0.525_532_409_916_329, 0.796_666_477_413_626_7, 0.960_289_856_497_536_3],
    [0.362_683_783_378_362, 0.313_706_645_877_887_3, 0.222_381_034_453_374_5, 0.101_228_536_290_376_3],
);

impl SecondMoment {
    fn is_tail(&self, k: usize) -> bool {
        self.tail.is_some() && k + 2 == self.times.len()
    }

    fn segment(&self, k: usize) -> impl Fn(f64) -> f64 + '_ {
        let (a, b) = (self.times[k], self.times[k + 1]);
        let (ga, gb) = (self.g[k], self.g[k + 1]);
        let (da, db) = (self.g_prime[k], self.g_prime[k + 1]);
        let tail = if self.is_tail(k) { self.tail } else { None };
        move |t: f64| {
            if let Some((_, gs, w2)) = tail {
                let w = (self.mixture.xi_prime(1.0) - self.mixture.xi_prime(t)).max(0.0);
                return 1.0 - (1.0 - gs) * (w / w2).sqrt();
            }
            let h = b - a;
            let u = (t - a) / h;
            if !(da.is_finite() && db.is_finite()) {
                return ga + u * (gb - ga);
            }
            let um = 1.0 - u;
            (1.0 + 2.0 * u) * um * um * ga + u * um * um * h * da + u * u * (3.0 - 2.0 * u) * gb - u * u * um * h * db
        }
    }

    fn segment_of(&self, t: f64) -> usize {
        self.times.partition_point(|&a| a <= t).clamp(1, self.times.len() - 1) - 1
    }

    pub fn value(&self, t: f64) -> f64 {
        self.segment(self.segment_of(t))(t).clamp(0.0, 1.0)
    }

    fn integrate<F: Fn(f64) -> f64>(a: f64, b: f64, f: F) -> f64 {
        if b <= a {
            return 0.0;
        }
        let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
        let (x, w) = GL8;
        half * (0..4).map(|i| w[i] * (f(mid - half * x[i]) + f(mid + half * x[i]))).sum::<f64>()
    }

    /// `∫_a^b ξ''(t) g(t) dt`.
    fn g_integral(&self, a: f64, b: f64) -> f64 {
        let mix = &self.mixture;
        let mut total = 0.0;
        for k in 0..self.times.len() - 1 {
            let (lo, hi) = (self.times[k].max(a), self.times[k + 1].min(b));
            if hi <= lo {
                continue;
            }
            if let (true, Some((_, gs, w2))) = (self.is_tail(k), self.tail) {
                // exact: ∫ ξ'' sqrt(W) dt = (2/3)(W_lo^{3/2} − W_hi^{3/2}), W = ξ'(1) − ξ'
                let w = |t: f64| (mix.xi_prime(1.0) - mix.xi_prime(t)).max(0.0);
                let (wl, wh) = (w(lo), w(hi));
                total += (wl - wh) - (1.0 - gs) / w2.sqrt() * (2.0 / 3.0) * (wl.powf(1.5) - wh.powf(1.5));
                continue;
            }
            let seg = self.segment(k);
            total += Self::integrate(lo, hi, |t| mix.xi_second(t) * seg(t));
        }
        total
    }

    /// `∫_r^1 ξ''(t)(g(t) − t) dt`.
    pub fn tail_integral(&self, r: f64) -> f64 {
        let r = r.clamp(0.0, 1.0);
        self.g_integral(r, 1.0) - (self.mixture.theta(1.0) - self.mixture.theta(r))
    }

    /// `∫₀¹ ξ''(t) γ(t) g(t) dt`.
    pub fn gamma_integral(&self, gamma: &GammaPath) -> f64 {
        gamma.intervals().map(|(a, b, m)| m * self.g_integral(a, b)).sum()
    }

    /// `½ ∫_r^1 ξ''(g − t) dt`: the derivative of the objective when `γ` is
    /// raised by one on `[r, 1)`.
    pub fn shift_derivative(&self, r: f64) -> f64 {
        0.5 * self.tail_integral(r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::erf;

    fn sk() -> MixtureSpec {
        MixtureSpec::sk(1.0)
    }

    fn heat(x: f64) -> f64 {
        (4.0 / std::f64::consts::PI).sqrt() * (-x * x / 4.0).exp() + x * erf(x / 2.0)
    }

    #[test]
    fn closed_form_limits() {
        let (p, px, pxx) = last_step_closed_form(0.0, 2.0, 0.7);
        assert!((p - heat(0.7)).abs() < 1e-14);
        let (p1, px1, pxx1) = last_step_closed_form(1e-6, 2.0, 0.7);
        assert!((p - p1).abs() < 1e-5 && (px - px1).abs() < 1e-5 && (pxx - pxx1).abs() < 1e-5);
        let h = 1e-5;
        for &(m, v2) in &[(0.5, 0.3), (4.0, 0.02), (30.0, 0.001)] {
            for &x in &[0.0, 0.05, 0.3, 1.5] {
                let (p, px, pxx) = last_step_closed_form(m, v2, x);
                let (pp, pxp, _) = last_step_closed_form(m, v2, x + h);
                let (pm, pxm, _) = last_step_closed_form(m, v2, x - h);
                assert!(((pp - pm) / (2.0 * h) - px).abs() < 1e-6, "m={m} x={x}");
                assert!(((pxp - pxm) / (2.0 * h) - pxx).abs() < 1e-4 * pxx.max(1.0), "m={m} x={x}");
                assert!(p >= x);
            }
        }
    }

    #[test]
    fn heat_kernel_solution() {
        let g = GammaPath::floor(0.0);
        let mut grid = PdeGrid::for_problem(&sk(), &FieldSpec::deterministic(0.0));
        grid.t_eval = vec![0.5];
        let sol = solve_zero_temp(&sk(), &g, &grid).unwrap();
        for x in [0.0, 0.5, -0.5, 1.0, -1.0, 2.0, -2.0] {
            let p = sol.evaluate(0.0, x).unwrap();
            assert!((p.psi - heat(x)).abs() < 1e-10, "{x}");
        }
        assert_eq!(sol.evaluate(1.0, 0.7).unwrap().psi, 0.7);
        assert_eq!(sol.evaluate(1.0, -3.0).unwrap().psi, 3.0);
        assert!(sol.evaluate(1.0, 0.0).unwrap().psi_xx.is_none());
        assert!(sol.evaluate(0.3, 0.0).is_err());
        assert!(sol.evaluate(0.0, 100.0).is_err());
    }

    #[test]
    fn multi_step_matches_single_step() {
        // γ constant with a spurious knot: the split recursion must agree
        // with the closed form of a single step.
        let mix = sk();
        let grid = PdeGrid::for_problem(&mix, &FieldSpec::deterministic(0.0));
        let split = GammaPath::new(0.0, vec![(0.0, 1.0), (0.5, 1.0)]).unwrap();
        let sol = solve_zero_temp(&mix, &split, &grid).unwrap();
        for x in [0.0, 0.3, 1.2] {
            let (exact, _, _) = last_step_closed_form(1.0, 2.0, x);
            let got = sol.evaluate(0.0, x).unwrap().psi;
            assert!((got - exact).abs() < 1e-7, "{x}: {got} vs {exact}");
        }
    }

    #[test]
    fn finite_temperature_replica_symmetric() {
        let mix = sk();
        let beta = 1.5;
        let g = GammaPath::constant(0.0, beta).unwrap();
        let grid = PdeGrid::for_problem(&mix, &FieldSpec::deterministic(0.0));
        let sol = solve_finite_temp(&mix, &g, beta, &grid).unwrap();
        for x in [0.0, 0.4, 2.0] {
            let exact = (log_cosh(beta * x) + 0.5 * beta * beta * 2.0) / beta;
            let got = sol.evaluate(0.0, x).unwrap().psi;
            assert!((got - exact).abs() < 1e-6, "{x}: {got} vs {exact}");
        }
        assert_eq!(sol.evaluate(1.0, 0.0).unwrap().psi, 0.0);
    }

    #[test]
    fn forward_law_heat_kernel() {
        // γ ≡ 0: X_t = √2 W_t and ∂_xΨ(t, x) = erf(x / (2√(1−t))).
        let mix = sk();
        let grid = PdeGrid::for_problem(&mix, &FieldSpec::deterministic(0.0));
        let sol = solve_zero_temp(&mix, &GammaPath::floor(0.0), &grid).unwrap();
        let sm = sol.second_moment(&[(0.0, 1.0)]).unwrap();
        let gh = GaussHermite::new(80);
        for t in [0.25_f64, 0.5, 0.75] {
            let oracle = gh.expect(|z| erf((2.0 * t).sqrt() * z / (2.0 * (1.0 - t).sqrt())).powi(2));
            assert!((sm.value(t) - oracle).abs() < 2e-4, "t={t}: {} vs {oracle}", sm.value(t));
        }
        assert!(sm.leaked < 1e-12);
    }
}
