//! Parisi-type functionals over step paths `γ` and their minimisation.
//!
//! For a floor `s` the functional is
//! `(1/s) log E exp(sΨ(0, g + h)) − ½ ∫ t ξ''(t) γ(t) dt`,
//! with `E Ψ(0, g + h)` in place of the first term at `s = 0`. Its derivative
//! when `γ` is raised by one on `[r, 1)` is `D(r) = ½ ∫_r^1 ξ''(g − t) dt`,
//! where `g(t) = E[α_t²]` under the optimally controlled diffusion started
//! from the field law tilted by `exp(sΨ(0, ·))`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gamma::GammaPath;
use crate::mixture::{FieldSpec, MixtureSpec};
use crate::pde::{PdeGrid, PdeSolution, SecondMoment, Terminal};
use crate::quadrature::{log_sum_exp_slice, GaussHermite};

/// Gauss–Hermite order for the Gaussian part of the field.
pub const FIELD_QUAD_ORDER: usize = 40;

/// Everything that defines one variational problem.
#[derive(Debug, Clone)]
pub struct ObjectiveSpec {
    pub mixture: MixtureSpec,
    pub field: FieldSpec,
    pub s: f64,
    pub mode: Terminal,
    pub grid: PdeGrid,
}

impl ObjectiveSpec {
    pub fn new(mixture: MixtureSpec, field: FieldSpec, s: f64, mode: Terminal) -> Result<Self> {
        field.validate()?;
        if !(s >= 0.0) || !s.is_finite() {
            return Err(Error::Invalid(format!("s = {s} must be finite and nonnegative")));
        }
        if let Terminal::FiniteTemp(beta) = mode {
            if !(beta > 0.0) || beta < s {
                return Err(Error::Invalid(format!("need β ≥ s and β > 0, got β = {beta}, s = {s}")));
            }
        }
        let grid = PdeGrid::for_problem(&mixture, &field);
        Ok(Self { mixture, field, s, mode, grid })
    }

    pub fn zero_temp(mixture: MixtureSpec, field: FieldSpec, s: f64) -> Result<Self> {
        Self::new(mixture, field, s, Terminal::ZeroTemp)
    }

    pub fn with_grid(mut self, grid: PdeGrid) -> Self {
        self.grid = grid;
        self
    }

    pub fn with_s(&self, s: f64) -> Result<Self> {
        Ok(Self::new(self.mixture.clone(), self.field.clone(), s, self.mode)?.with_grid(self.grid.clone()))
    }

    pub fn solve(&self, gamma: &GammaPath) -> Result<PdeSolution> {
        PdeSolution::solve(&self.mixture, gamma, &self.grid, self.mode)
    }

    /// Atoms `(x, p)` of the law of `g₁ + h₁`.
    pub fn field_nodes(&self) -> Vec<(f64, f64)> {
        field_nodes(&self.field)
    }
}

pub fn field_nodes(field: &FieldSpec) -> Vec<(f64, f64)> {
    let atoms = field.atoms();
    if field.gaussian_var <= 0.0 {
        return atoms.into_iter().filter(|&(_, p)| p > 0.0).collect();
    }
    let gh = GaussHermite::new(FIELD_QUAD_ORDER);
    let sd = field.gaussian_var.sqrt();
    let mut out = Vec::with_capacity(atoms.len() * gh.len());
    for (a, pa) in atoms.into_iter().filter(|&(_, p)| p > 0.0) {
        for (z, w) in gh.nodes.iter().zip(&gh.weights) {
            out.push((a + sd * z, pa * w));
        }
    }
    out
}

/// One evaluation of the functional together with its PDE solution.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub value: f64,
    /// `(1/s) log E exp(sΨ(0, ·))`, or `E Ψ(0, ·)` at `s = 0`.
    pub psi_term: f64,
    /// `½ ∫ t ξ''(t) γ(t) dt`.
    pub correction: f64,
    /// Field law tilted by `exp(sΨ(0, ·))`.
    pub init: Vec<(f64, f64)>,
    pub solution: PdeSolution,
}

impl Evaluation {
    pub fn second_moment(&self) -> Result<SecondMoment> {
        self.solution.second_moment(&self.init)
    }
}

pub fn evaluate(spec: &ObjectiveSpec, gamma: &GammaPath) -> Result<Evaluation> {
    if gamma.knots()[0].1 < spec.s {
        return Err(Error::Gamma(format!("γ(0) = {} below s = {}", gamma.knots()[0].1, spec.s)));
    }
    let solution = spec.solve(gamma)?;
    let nodes = spec.field_nodes();
    let psi: Vec<f64> = nodes.iter().map(|&(x, _)| solution.at_zero(x).0).collect();
    let (psi_term, init) = if spec.s > 0.0 {
        let logs: Vec<f64> = nodes.iter().zip(&psi).map(|(&(_, p), &v)| p.ln() + spec.s * v).collect();
        let lse = log_sum_exp_slice(&logs);
        let init = nodes.iter().zip(&logs).map(|(&(x, _), &l)| (x, (l - lse).exp())).collect();
        (lse / spec.s, init)
    } else {
        (nodes.iter().zip(&psi).map(|(&(_, p), &v)| p * v).sum(), nodes)
    };
    let correction = gamma.correction(&spec.mixture);
    Ok(Evaluation { value: psi_term - correction, psi_term, correction, init, solution })
}

pub fn objective(spec: &ObjectiveSpec, gamma: &GammaPath) -> Result<f64> {
    Ok(evaluate(spec, gamma)?.value)
}

/// Value of a functional and its slope profile `r ↦ D(r)`.
pub struct Point {
    pub value: f64,
    pub slope: Box<dyn Fn(f64) -> f64 + Send + Sync>,
}

/// A convex functional of `γ` with an up-shift derivative.
pub trait Functional {
    fn floor(&self) -> f64;

    /// Upper bound on `γ(1−) − s`, if any.
    fn cap(&self) -> Option<f64> {
        None
    }

    /// Natural length scale of `γ` increments at time `t`.
    fn scale(&self, t: f64) -> f64;

    fn point(&self, gamma: &GammaPath) -> Result<Point>;
}

impl Functional for ObjectiveSpec {
    fn floor(&self) -> f64 {
        self.s
    }

    fn cap(&self) -> Option<f64> {
        match self.mode {
            Terminal::ZeroTemp => None,
            Terminal::FiniteTemp(beta) => Some(beta - self.s),
        }
    }

    fn scale(&self, t: f64) -> f64 {
        let w = self.mixture.xi_prime(1.0) - self.mixture.xi_prime(t);
        match self.mode {
            Terminal::ZeroTemp => 1.0 / w.max(1e-4),
            Terminal::FiniteTemp(beta) => 1.0 / (w + 1.0 / (beta * beta)),
        }
    }

    fn point(&self, gamma: &GammaPath) -> Result<Point> {
        let ev = evaluate(self, gamma)?;
        let sm = ev.second_moment()?;
        Ok(Point { value: ev.value, slope: Box::new(move |r| sm.shift_derivative(r)) })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub max_knots: usize,
    /// Maximum number of functional evaluations.
    pub budget: usize,
    /// Tolerance on the first-order margin, in value units.
    pub tol: f64,
    /// Number of candidate times scanned for new knots.
    pub probes: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { max_knots: 16, budget: 2000, tol: 1e-4, probes: 200 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OptimizationReport {
    pub best_gamma: GammaPath,
    pub value: f64,
    /// Functional evaluations used.
    pub iterations: usize,
    /// Smallest directional derivative over the probe directions.
    pub first_order_margin: f64,
    pub knot_count: usize,
    pub converged: bool,
}

impl OptimizationReport {
    /// `key: value` lines followed by the knots as `q,m` rows.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "value: {:.10}\niterations: {}\nfirst_order_margin: {:.3e}\nknot_count: {}\nconverged: {}\ns_floor: {}\nq,m\n",
            self.value,
            self.iterations,
            self.first_order_margin,
            self.knot_count,
            self.converged,
            self.best_gamma.s_floor()
        );
        for &(q, m) in self.best_gamma.knots() {
            out.push_str(&format!("{q:.8},{m:.10}\n"));
        }
        out
    }
}

struct State {
    x: Vec<f64>,
    value: f64,
    grad: Vec<f64>,
    slope: Box<dyn Fn(f64) -> f64 + Send + Sync>,
}

struct Search<'a, F: Functional> {
    f: &'a F,
    times: Vec<f64>,
    evals: usize,
    budget: usize,
}

impl<F: Functional> Search<'_, F> {
    fn gamma(&self, x: &[f64]) -> Result<GammaPath> {
        GammaPath::from_increments(self.f.floor(), &self.times, x)
    }

    fn eval(&mut self, x: Vec<f64>) -> Result<State> {
        self.evals += 1;
        let p = self.f.point(&self.gamma(&x)?)?;
        let grad = self.times.iter().map(|&r| (p.slope)(r)).collect();
        Ok(State { x, value: p.value, grad, slope: p.slope })
    }

    fn project(&self, x: &mut [f64]) {
        for v in x.iter_mut() {
            *v = v.max(0.0);
        }
        let Some(cap) = self.f.cap() else { return };
        if x.iter().sum::<f64>() <= cap {
            return;
        }
        // Euclidean projection onto the capped simplex
        let mut sorted: Vec<f64> = x.to_vec();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let (mut acc, mut tau) = (0.0, 0.0);
        for (k, &v) in sorted.iter().enumerate() {
            acc += v;
            let t = (acc - cap) / (k + 1) as f64;
            if v - t > 0.0 {
                tau = t;
            }
        }
        for v in x.iter_mut() {
            *v = (*v - tau).max(0.0);
        }
    }

    fn capped(&self, x: &[f64]) -> bool {
        self.f.cap().is_some_and(|c| x.iter().sum::<f64>() >= c - 1e-12)
    }

    /// Largest first-order violation among the knot coordinates.
    fn residual(&self, st: &State) -> f64 {
        let shift = if self.capped(&st.x) { self.cap_level(st) } else { 0.0 };
        st.x
            .iter()
            .zip(&st.grad)
            .map(|(&x, &g)| {
                let g = g - shift;
                if x > 0.0 {
                    g.abs()
                } else {
                    (-g).max(0.0)
                }
            })
            .fold(0.0, f64::max)
    }

    /// Multiplier of the cap: the slope at the first knot where `γ` reaches it.
    fn cap_level(&self, st: &State) -> f64 {
        let last = st.x.iter().rposition(|&v| v > 0.0).unwrap_or(0);
        st.grad[last].min(0.0)
    }

    /// Projected quasi-Newton descent over the increments at fixed knot times.
    fn descend(&mut self, mut st: State, tol: f64) -> Result<State> {
        let n = st.x.len();
        let diag: Vec<f64> = self.times.iter().map(|&t| self.f.scale(t).powi(2)).collect();
        let identity = |diag: &[f64]| {
            let mut h = vec![0.0; n * n];
            for i in 0..n {
                h[i * n + i] = diag[i];
            }
            h
        };
        let mut h = identity(&diag);
        let mut fresh = true;
        let mut last_pivot = None;
        for _ in 0..200 {
            if self.residual(&st) < tol || self.evals >= self.budget {
                break;
            }
            // on the cap, the last positive increment absorbs the others
            let pivot = self
                .capped(&st.x)
                .then(|| st.x.iter().rposition(|&v| v > 0.0).unwrap_or(0))
                .filter(|&c| st.grad[c] < 0.0);
            if pivot != last_pivot {
                h = identity(&diag);
                fresh = true;
                last_pivot = pivot;
            }
            let ge: Vec<f64> = match pivot {
                Some(c) => st.grad.iter().map(|g| g - st.grad[c]).collect(),
                None => st.grad.clone(),
            };
            let free: Vec<bool> =
                (0..n).map(|i| Some(i) != pivot && (st.x[i] > 0.0 || ge[i] < 0.0)).collect();
            let direction = |h: &[f64]| {
                let mut d = vec![0.0; n];
                for i in (0..n).filter(|&i| free[i]) {
                    d[i] = -(0..n).filter(|&j| free[j]).map(|j| h[i * n + j] * ge[j]).sum::<f64>();
                }
                if let Some(c) = pivot {
                    d[c] = -d.iter().sum::<f64>();
                }
                d
            };
            let mut d = direction(&h);
            if d.iter().zip(&st.grad).map(|(a, b)| a * b).sum::<f64>() >= 0.0 {
                h = identity(&diag);
                fresh = true;
                d = direction(&h);
            }
            let mut alpha = 1.0;
            let mut accepted = None;
            for _ in 0..16 {
                let mut x: Vec<f64> = st.x.iter().zip(&d).map(|(a, b)| a + alpha * b).collect();
                self.project(&mut x);
                let step: f64 = x.iter().zip(&st.x).zip(&st.grad).map(|((a, b), g)| (a - b) * g).sum();
                if step >= 0.0 {
                    alpha *= 0.5;
                    continue;
                }
                let trial = self.eval(x)?;
                if trial.value <= st.value + 1e-4 * step {
                    accepted = Some(trial);
                    break;
                }
                alpha *= 0.5;
                if self.evals >= self.budget {
                    break;
                }
            }
            let Some(next) = accepted else {
                if fresh {
                    break;
                }
                h = identity(&diag);
                fresh = true;
                continue;
            };
            let s: Vec<f64> = next.x.iter().zip(&st.x).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = next.grad.iter().zip(&st.grad).map(|(a, b)| a - b).collect();
            bfgs_update(&mut h, &s, &y);
            fresh = false;
            st = next;
        }
        Ok(st)
    }
}

fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64]) {
    let n = s.len();
    let sy: f64 = s.iter().zip(y).map(|(a, b)| a * b).sum();
    let yy: f64 = y.iter().map(|v| v * v).sum();
    let ss: f64 = s.iter().map(|v| v * v).sum();
    if sy <= 1e-12 * (ss * yy).sqrt() {
        return;
    }
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| (0..n).map(|j| h[i * n + j] * y[j]).sum()).collect();
    let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

/// Candidate knot times, denser towards `t = 1`.
fn probe_times(n: usize) -> Vec<f64> {
    (0..n).map(|i| 1.0 - (1.0 - i as f64 / n as f64).powi(2)).collect()
}

/// Minimal directional derivative over single-step raises at `probes` and
/// lowering of the existing knots.
fn margin<F: Functional>(search: &Search<F>, st: &State, probes: &[f64]) -> (f64, Option<f64>) {
    let capped = search.capped(&st.x);
    let shift = if capped { search.cap_level(st) } else { 0.0 };
    let cap_time = capped.then(|| search.times[st.x.iter().rposition(|&v| v > 0.0).unwrap_or(0)]);
    let mut worst = f64::INFINITY;
    let mut arg = None;
    for &r in probes {
        if cap_time.is_some_and(|q| r >= q) {
            continue;
        }
        let d = (st.slope)(r) - shift;
        if d < worst {
            worst = d;
            arg = Some(r);
        }
    }
    for (&x, &g) in st.x.iter().zip(&st.grad) {
        if x > 0.0 {
            worst = worst.min(-(g - shift).abs());
        }
    }
    (worst, arg)
}

/// Minimises a [`Functional`] over nondecreasing step paths, inserting knots
/// one at a time where the slope profile is most negative.
pub fn minimize<F: Functional>(f: &F, cfg: &OptimizerConfig, warm: Option<&GammaPath>) -> Result<OptimizationReport> {
    if cfg.max_knots == 0 {
        return Err(Error::Invalid("max_knots must be at least 1".into()));
    }
    let s = f.floor();
    let (times, x0) = match warm {
        Some(g) => {
            let lifted: Vec<(f64, f64)> = g.knots().iter().map(|&(q, m)| (q, m.max(s))).collect();
            let g = GammaPath::new(s, lifted)?;
            let mut x = g.increments();
            let times: Vec<f64> = g.knot_times().take(cfg.max_knots).collect();
            x.truncate(times.len());
            (times, x)
        }
        None => (vec![0.0], vec![0.0]),
    };
    let mut search = Search { f, times, evals: 0, budget: cfg.budget.max(1) };
    let mut x0 = x0;
    search.project(&mut x0);
    let mut st = search.eval(x0)?;
    let probes = probe_times(cfg.probes.max(8));
    let mut converged = false;
    let mut worst;
    loop {
        st = search.descend(st, 0.25 * cfg.tol)?;
        let (w, arg) = margin(&search, &st, &probes);
        worst = w;
        if worst >= -cfg.tol {
            converged = true;
            break;
        }
        if search.evals >= search.budget {
            break;
        }
        // drop knots that sit at zero with a positive slope
        let keep: Vec<bool> =
            (0..st.x.len()).map(|j| j == 0 || st.x[j] > 0.0 || st.grad[j] < cfg.tol).collect();
        if keep.iter().any(|k| !k) {
            let pick = |v: &[f64]| v.iter().zip(&keep).filter(|(_, &k)| k).map(|(&a, _)| a).collect::<Vec<_>>();
            search.times = pick(&search.times);
            st.x = pick(&st.x);
            st.grad = pick(&st.grad);
        }
        let Some(r) = arg else { break };
        let near = search.times.iter().any(|&q| (q - r).abs() < 1e-3);
        if near || search.times.len() >= cfg.max_knots {
            // no room for a new knot: one more pass at a tighter tolerance
            let before = st.value;
            st = search.descend(st, 0.05 * cfg.tol)?;
            if before - st.value < 1e-12 {
                let (w, _) = margin(&search, &st, &probes);
                worst = w;
                converged = worst >= -cfg.tol;
                break;
            }
            continue;
        }
        let pos = search.times.partition_point(|&q| q < r);
        search.times.insert(pos, r);
        let mut x = st.x.clone();
        x.insert(pos, 0.0);
        st = search.eval(x)?;
    }
    let best_gamma = search.gamma(&st.x)?.simplified();
    Ok(OptimizationReport {
        knot_count: best_gamma.len(),
        best_gamma,
        value: st.value,
        iterations: search.evals,
        first_order_margin: worst,
        converged,
    })
}

pub fn minimize_gamma(spec: &ObjectiveSpec, cfg: &OptimizerConfig) -> Result<OptimizationReport> {
    minimize(spec, cfg, None)
}

/// `gs` for a mixture and field.
pub fn ground_state(mixture: &MixtureSpec, field: &FieldSpec) -> Result<f64> {
    let spec = ObjectiveSpec::zero_temp(mixture.clone(), field.clone(), 0.0)?;
    Ok(minimize_gamma(&spec, &OptimizerConfig::default())?.value)
}

/// `lim (1/sN) log E[Z_N(β)^{s/β}]`.
pub fn fractional_moment_limit(mixture: &MixtureSpec, field: &FieldSpec, s: f64, beta: f64) -> Result<f64> {
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::Invalid(format!("s = {s} must lie in (0, 1)")));
    }
    let spec = ObjectiveSpec::new(mixture.clone(), field.clone(), s, Terminal::FiniteTemp(beta))?;
    Ok(minimize_gamma(&spec, &OptimizerConfig::default())?.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::erf;
    use std::f64::consts::PI;

    fn heat(h: f64) -> f64 {
        (4.0 / PI).sqrt() * (-h * h / 4.0).exp() + h * erf(h / 2.0)
    }

    /// `(1/m) log E exp(m|h + √2 Z|)` by a dense trapezoid rule.
    fn tilted(m: f64, h: f64) -> f64 {
        let (n, l) = (200_000, 14.0);
        let dz = 2.0 * l / n as f64;
        let sum: f64 = (0..=n)
            .map(|i| {
                let z = -l + i as f64 * dz;
                let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                w * dz * crate::quadrature::normal_pdf(z) * (m * (h + 2f64.sqrt() * z).abs()).exp()
            })
            .sum();
        sum.ln() / m
    }

    #[test]
    fn replica_symmetric_values() {
        let mix = MixtureSpec::sk(1.0);
        for (s, h) in [(0.0, 0.0), (0.0, 0.8), (0.5, 0.8)] {
            let spec = ObjectiveSpec::zero_temp(mix.clone(), FieldSpec::deterministic(h), s).unwrap();
            let v = objective(&spec, &GammaPath::constant(s, s).unwrap()).unwrap();
            let psi = if s > 0.0 { tilted(s, h) } else { heat(h) };
            let expected = psi - 0.5 * s * mix.theta(1.0);
            assert!((v - expected).abs() < 1e-6, "{s} {h}: {v} vs {expected}");
        }
    }

    #[test]
    fn random_field_wrapper() {
        let mix = MixtureSpec::sk(0.5);
        let field = FieldSpec { h: 0.0, gaussian_var: 0.3, atoms: vec![(0.2, 0.5), (-0.6, 0.5)] };
        let s = 0.7;
        let spec = ObjectiveSpec::zero_temp(mix.clone(), field, s).unwrap();
        let gamma = GammaPath::new(s, vec![(0.0, s), (0.5, 2.0)]).unwrap();
        let ev = evaluate(&spec, &gamma).unwrap();
        let gh = GaussHermite::new(120);
        let mean: f64 = [(0.2, 0.5), (-0.6, 0.5)]
            .iter()
            .map(|&(a, p)| p * gh.expect(|z| (s * ev.solution.at_zero(a + 0.3f64.sqrt() * z).0).exp()))
            .sum();
        assert!((ev.psi_term - mean.ln() / s).abs() < 1e-9);
        assert!((ev.init.iter().map(|&(_, p)| p).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    /// Shift-invariant convex mock: `½∫ξ''(γ − s − a t)²/(2a) − ½∫tξ''γ`,
    /// minimised by `γ = s + a t` up to the step approximation.
    struct Mock {
        mix: MixtureSpec,
        s: f64,
        a: f64,
    }

    impl Functional for Mock {
        fn floor(&self) -> f64 {
            self.s
        }
        fn scale(&self, t: f64) -> f64 {
            1.0 / (self.mix.xi_prime(1.0) - self.mix.xi_prime(t) + 0.1)
        }
        fn point(&self, gamma: &GammaPath) -> Result<Point> {
            let gl = crate::quadrature::GaussLegendre::new(16);
            let (s, a) = (self.s, self.a);
            let mix = self.mix.clone();
            let pen: f64 = gamma
                .intervals()
                .map(|(lo, hi, m)| gl.integrate(lo, hi, |t| mix.xi_second(t) * (m - s - a * t).powi(2) / (4.0 * a)))
                .sum();
            let value = pen - gamma.correction(&mix);
            let g = gamma.clone();
            let slope = move |r: f64| {
                let mut total = 0.0;
                for (lo, hi, m) in g.intervals() {
                    let lo = lo.max(r);
                    if hi > lo {
                        total += gl.integrate(lo, hi, |t| mix.xi_second(t) * ((m - s - a * t) / (2.0 * a) - 0.5 * t));
                    }
                }
                total
            };
            Ok(Point { value, slope: Box::new(slope) })
        }
    }

    #[test]
    fn floor_shift_identity() {
        let mix = MixtureSpec::sk(1.0);
        let cfg = OptimizerConfig { max_knots: 24, tol: 1e-6, ..Default::default() };
        let base = minimize(&Mock { mix: mix.clone(), s: 0.0, a: 2.0 }, &cfg, None).unwrap();
        for s in [0.3, 1.5] {
            let shifted = minimize(&Mock { mix: mix.clone(), s, a: 2.0 }, &cfg, None).unwrap();
            let expected = base.value - 0.5 * s * mix.theta(1.0);
            assert!((shifted.value - expected).abs() < 1e-4, "{s}: {} vs {expected}", shifted.value);
            assert!(shifted.best_gamma.knots()[0].1 >= s);
        }
        assert!(base.first_order_margin > -1e-3, "{}", base.first_order_margin);
    }
}
