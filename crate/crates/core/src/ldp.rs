//! The Laplace curve `Λ(s)` of `N·L_N`, its envelope derivative and the
//! upper rate function `Λ*(r) = sup_{s ≥ 0} (sr − Λ(s))`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gamma::GammaPath;
use crate::martingale::{envelope_derivative, uninverted_value, simulate_optimal, solve_for_simulation, Estimate, MartingaleStats, SdeConfig};
use crate::mixture::{FieldSpec, MixtureSpec};
use crate::pde::PdeGrid;
use crate::variational::{minimize, ObjectiveSpec, OptimizerConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurveConfig {
    pub s_grid: Vec<f64>,
    /// Flat-piece tolerance on `Λ(s)/s − gs`.
    pub flat_tol: f64,
    /// A midpoint is inserted where `Λ'` jumps by more than this.
    pub max_slope_jump: f64,
    pub optimizer: OptimizerConfig,
    pub sde: SdeConfig,
    /// PDE grid; sized from the problem when absent.
    pub grid: Option<PdeGrid>,
}

impl Default for CurveConfig {
    fn default() -> Self {
        Self {
            s_grid: (0..=40).map(|i| i as f64 * 0.05).collect(),
            flat_tol: 1e-3,
            max_slope_jump: 0.15,
            optimizer: OptimizerConfig::default(),
            sde: SdeConfig::default(),
            grid: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CurvePoint {
    pub s: f64,
    /// Optimal value of the variational formula, `Λ(s)/s` (`gs` at `s = 0`).
    pub value: f64,
    pub lambda: f64,
    /// `chi + s·balance` from the simulated optimal martingale.
    pub lambda_prime: Estimate,
    /// `chi + (s/2)·balance`, the supremum side of the duality.
    pub uninverted: Estimate,
    pub chi: Estimate,
    pub balance: Estimate,
    pub gamma: GammaPath,
    pub first_order_margin: f64,
    pub converged: bool,
}

/// Optimises `γ` at one `s` and simulates the optimal martingale.
pub fn laplace_point(
    mix: &MixtureSpec,
    h: f64,
    s: f64,
    warm: Option<&GammaPath>,
    cfg: &CurveConfig,
) -> Result<(CurvePoint, MartingaleStats)> {
    let mut spec = ObjectiveSpec::zero_temp(mix.clone(), FieldSpec::deterministic(h), s)?;
    if let Some(grid) = &cfg.grid {
        spec = spec.with_grid(grid.clone());
    }
    let rep = minimize(&spec, &cfg.optimizer, warm)?;
    let sol = solve_for_simulation(mix, &rep.best_gamma, &spec.grid, &cfg.sde)?;
    let stats = simulate_optimal(mix, h, &rep.best_gamma, &sol, &cfg.sde)?;
    let point = CurvePoint {
        s,
        value: rep.value,
        lambda: s * rep.value,
        lambda_prime: envelope_derivative(&stats, s),
        uninverted: uninverted_value(&stats, s),
        chi: stats.chi,
        balance: stats.balance_integral,
        gamma: rep.best_gamma,
        first_order_margin: rep.first_order_margin,
        converged: rep.converged,
    };
    Ok((point, stats))
}

#[derive(Debug, Clone, Serialize)]
pub struct LaplaceCurve {
    pub h: f64,
    pub points: Vec<CurvePoint>,
    pub gs: f64,
    /// End of the flat piece `Λ(s) = s·gs`.
    pub s_underline: f64,
}

pub fn lambda_curve(mix: &MixtureSpec, h: f64, cfg: &CurveConfig) -> Result<LaplaceCurve> {
    let mut grid = cfg.s_grid.clone();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    if grid.first() != Some(&0.0) || grid.iter().any(|&s| !(s >= 0.0)) {
        return Err(Error::Invalid("s_grid must be nonnegative and contain 0".into()));
    }
    let mut points: Vec<CurvePoint> = Vec::with_capacity(grid.len());
    for &s in &grid {
        let warm = points.last().map(|p| p.gamma.clone());
        points.push(laplace_point(mix, h, s, warm.as_ref(), cfg)?.0);
    }
    // one round of refinement where the envelope derivative jumps
    let mut extra = Vec::new();
    for w in points.windows(2) {
        if w[1].lambda_prime.value - w[0].lambda_prime.value > cfg.max_slope_jump {
            let s = 0.5 * (w[0].s + w[1].s);
            extra.push(laplace_point(mix, h, s, Some(&w[0].gamma), cfg)?.0);
        }
    }
    points.extend(extra);
    points.sort_by(|a, b| a.s.total_cmp(&b.s));
    Ok(LaplaceCurve::from_points(h, points, cfg.flat_tol))
}

impl LaplaceCurve {
    pub fn from_points(h: f64, points: Vec<CurvePoint>, flat_tol: f64) -> Self {
        let gs = points[0].value;
        let s_underline = points.iter().take_while(|p| p.value - gs <= flat_tol).last().map_or(0.0, |p| p.s);
        Self { h, points, gs, s_underline }
    }

    /// A curve from exact values `Λ(s)` and `Λ'(s)`.
    pub fn synthetic<L: Fn(f64) -> f64, D: Fn(f64) -> f64>(s_grid: &[f64], lambda: L, dlambda: D) -> Self {
        let exact = |value| Estimate { value, stderr: 0.0 };
        let points: Vec<CurvePoint> = s_grid
            .iter()
            .map(|&s| CurvePoint {
                s,
                value: if s > 0.0 { lambda(s) / s } else { dlambda(0.0) },
                lambda: lambda(s),
                lambda_prime: exact(dlambda(s)),
                uninverted: exact(f64::NAN),
                chi: exact(f64::NAN),
                balance: exact(f64::NAN),
                gamma: GammaPath::floor(s),
                first_order_margin: 0.0,
                converged: true,
            })
            .collect();
        Self::from_points(0.0, points, 1e-3)
    }

    pub fn s_grid(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.s).collect()
    }

    pub fn lambda(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.lambda).collect()
    }

    pub fn lambda_prime(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.lambda_prime.value).collect()
    }

    pub fn s_max(&self) -> f64 {
        self.points.last().map_or(0.0, |p| p.s)
    }

    /// Central differences of `Λ` at the interior points.
    pub fn lambda_prime_fd(&self) -> Vec<(f64, f64)> {
        self.points
            .windows(3)
            .map(|w| (w[1].s, (w[2].lambda - w[0].lambda) / (w[2].s - w[0].s)))
            .collect()
    }

    /// Cubic Hermite interpolant of `Λ` using the envelope slopes.
    pub fn lambda_at(&self, s: f64) -> f64 {
        let p = &self.points;
        let i = p.partition_point(|q| q.s <= s).clamp(1, p.len() - 1);
        let (a, b) = (&p[i - 1], &p[i]);
        let hh = b.s - a.s;
        let u = ((s - a.s) / hh).clamp(0.0, 1.0);
        let um = 1.0 - u;
        let (da, db) = (a.lambda_prime.value, b.lambda_prime.value);
        (1.0 + 2.0 * u) * um * um * a.lambda + u * um * um * hh * da + u * u * (3.0 - 2.0 * u) * b.lambda
            - u * u * um * hh * db
    }

    /// Nondecreasing fit of `Λ'` (pool adjacent violators, inverse-variance
    /// weights), as `(s, Λ')` pairs.
    pub fn monotone_slope(&self) -> Vec<(f64, f64)> {
        let mut blocks: Vec<(f64, f64, usize)> = Vec::new();
        for p in &self.points {
            let w = 1.0 / p.lambda_prime.stderr.max(1e-6).powi(2);
            blocks.push((p.lambda_prime.value * w, w, 1));
            while blocks.len() > 1 {
                let (b, a) = (blocks[blocks.len() - 1], blocks[blocks.len() - 2]);
                if a.0 / a.1 <= b.0 / b.1 {
                    break;
                }
                blocks.pop();
                *blocks.last_mut().unwrap() = (a.0 + b.0, a.1 + b.1, a.2 + b.2);
            }
        }
        let mut out = Vec::with_capacity(self.points.len());
        let mut k = 0;
        for (sum, w, n) in blocks {
            for _ in 0..n {
                out.push((self.points[k].s, sum / w));
                k += 1;
            }
        }
        out
    }

    /// Smallest `s` with `Λ'(s) = r` on the monotone slope fit, or `None`
    /// when `r` exceeds the largest fitted slope.
    pub fn solve_slope(&self, r: f64) -> Option<f64> {
        let fit = self.monotone_slope();
        if r <= fit[0].1 {
            return Some(fit[0].0);
        }
        let j = fit.iter().position(|&(_, d)| d >= r)?;
        let ((s0, d0), (s1, d1)) = (fit[j - 1], fit[j]);
        if d1 <= d0 {
            return Some(s0);
        }
        let (mut lo, mut hi) = (s0, s1);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if d0 + (d1 - d0) * (mid - s0) / (s1 - s0) < r {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Some(0.5 * (lo + hi))
    }

    fn balance_at(&self, s: f64) -> Estimate {
        let p = &self.points;
        let i = p.partition_point(|q| q.s <= s).clamp(1, p.len() - 1);
        let (a, b) = (&p[i - 1], &p[i]);
        let u = ((s - a.s) / (b.s - a.s)).clamp(0.0, 1.0);
        Estimate {
            value: (1.0 - u) * a.balance.value + u * b.balance.value,
            stderr: (1.0 - u) * a.balance.stderr + u * b.balance.stderr,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateMethod {
    Legendre,
    Direct,
}

#[derive(Debug, Clone, Serialize)]
pub struct RateResult {
    pub r: f64,
    pub rate: f64,
    pub stderr: f64,
    pub s_star: f64,
    pub method: RateMethod,
    /// `∫ ξ''(E[α_t²] − t) dt` at `s_star`.
    pub balance_term: f64,
    /// `(r − chi)² / (2·balance)`, the quotient form (direct method only).
    pub quotient: Option<Estimate>,
    /// `r` lies beyond the slopes covered by the curve: `rate` is a lower bound.
    pub lower_bound_only: bool,
}

/// `sup_{0 ≤ s ≤ s_max} (sr − Λ(s))` on the interpolated curve.
pub fn rate_legendre(curve: &LaplaceCurve, r: f64) -> RateResult {
    let f = |s: f64| s * r - curve.lambda_at(s);
    let p = &curve.points;
    let best = (0..p.len()).max_by(|&a, &b| f(p[a].s).total_cmp(&f(p[b].s))).unwrap_or(0);
    let lo = p[best.saturating_sub(1)].s;
    let hi = p[(best + 1).min(p.len() - 1)].s;
    let s_star = golden_max(&f, lo, hi);
    let s_star = if f(s_star) >= f(p[best].s) { s_star } else { p[best].s };
    let rate = f(s_star).max(0.0);
    let last = p.last().expect("nonempty curve");
    let bal = curve.balance_at(s_star);
    RateResult {
        r,
        rate,
        stderr: 0.5 * s_star * s_star * bal.stderr,
        s_star: if rate > 0.0 { s_star } else { 0.0 },
        method: RateMethod::Legendre,
        balance_term: bal.value,
        quotient: None,
        lower_bound_only: r > last.lambda_prime.value,
    }
}

fn golden_max<F: Fn(f64) -> f64>(f: &F, mut a: f64, mut b: f64) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..80 {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// `Λ*(r) = (s²/2)·balance` at the `s` solving `r = Λ'(s)`, with the
/// optimiser and simulation re-run at that `s`.
pub fn rate_direct(mix: &MixtureSpec, h: f64, r: f64, curve: &LaplaceCurve, cfg: &CurveConfig) -> Result<RateResult> {
    if r <= curve.gs {
        return Ok(RateResult {
            r,
            rate: 0.0,
            stderr: 0.0,
            s_star: 0.0,
            method: RateMethod::Direct,
            balance_term: curve.points[0].balance.value,
            quotient: None,
            lower_bound_only: false,
        });
    }
    let (s_star, lower) = match curve.solve_slope(r) {
        Some(s) => (s, false),
        None => (curve.s_max(), true),
    };
    let i = curve.points.partition_point(|p| p.s <= s_star).saturating_sub(1);
    let (_, stats) = laplace_point(mix, h, s_star, Some(&curve.points[i].gamma), cfg)?;
    let bal = stats.balance_integral;
    let chi = stats.chi;
    let q = (r - chi.value).powi(2) / (2.0 * bal.value);
    // delta method for (r − chi)² / (2b)
    let dq_dchi = -(r - chi.value) / bal.value;
    let dq_db = -q / bal.value;
    let var = dq_dchi.powi(2) * chi.stderr.powi(2)
        + dq_db.powi(2) * bal.stderr.powi(2)
        + 2.0 * dq_dchi * dq_db * stats.chi_balance_cov;
    Ok(RateResult {
        r,
        rate: 0.5 * s_star * s_star * bal.value,
        stderr: 0.5 * s_star * s_star * bal.stderr,
        s_star,
        method: RateMethod::Direct,
        balance_term: bal.value,
        quotient: Some(Estimate { value: q, stderr: var.max(0.0).sqrt() }),
        lower_bound_only: lower,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbePoint {
    pub delta: f64,
    pub rate: f64,
    /// `Λ*(gs + δ)/δ²`.
    pub ratio: f64,
    pub stderr: f64,
}

/// `Λ*(gs + δ)/δ²` for each `δ`, from the Legendre transform of the curve.
pub fn quadratic_probe(curve: &LaplaceCurve, deltas: &[f64]) -> Result<Vec<ProbePoint>> {
    if deltas.len() < 4 || deltas.iter().any(|&d| !(d > 0.0 && d <= 0.3)) {
        return Err(Error::Invalid("need at least four δ in (0, 0.3]".into()));
    }
    Ok(deltas
        .iter()
        .map(|&delta| {
            let res = rate_legendre(curve, curve.gs + delta);
            ProbePoint { delta, rate: res.rate, ratio: res.rate / (delta * delta), stderr: res.stderr / (delta * delta) }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic() -> LaplaceCurve {
        let grid: Vec<f64> = (0..=40).map(|i| i as f64 * 0.05).collect();
        LaplaceCurve::synthetic(&grid, |s| 0.5 * s * s, |s| s)
    }

    #[test]
    fn quadratic_legendre_pair() {
        let c = quadratic();
        let res = rate_legendre(&c, 1.0);
        assert!((res.rate - 0.5).abs() < 1e-10, "{}", res.rate);
        assert!((res.s_star - 1.0).abs() < 1e-6);
        assert_eq!(rate_legendre(&c, 0.0).rate, 0.0);
        assert!(rate_legendre(&c, 2.5).lower_bound_only);
        assert_eq!(c.s_underline, 0.0);
    }

    #[test]
    fn probe_of_quadratic_rate() {
        let c = quadratic();
        for p in quadratic_probe(&c, &[0.2, 0.1, 0.05, 0.025]).unwrap() {
            // Λ*(r) = r²/2 and gs = 0
            assert!((p.ratio - 0.5).abs() < 1e-8);
        }
        assert!(quadratic_probe(&c, &[0.2, 0.1]).is_err());
    }

    #[test]
    fn slope_inversion_is_monotone() {
        let c = quadratic();
        let mut prev = 0.0;
        for r in [0.1, 0.33, 0.9, 1.7] {
            let s = c.solve_slope(r).unwrap();
            assert!((s - r).abs() < 1e-9 && s >= prev);
            prev = s;
        }
        assert!(c.solve_slope(3.0).is_none());
    }

    #[test]
    fn flat_piece_detection() {
        let grid: Vec<f64> = (0..=20).map(|i| i as f64 * 0.05).collect();
        // Λ(s) = s on [0, 0.4], then strictly convex
        let lam = |s: f64| s + 0.5 * (s - 0.4f64).max(0.0).powi(2);
        let c = LaplaceCurve::synthetic(&grid, lam, |s| 1.0 + (s - 0.4f64).max(0.0));
        assert!((c.s_underline - 0.4).abs() < 1e-12);
        assert_eq!(c.gs, 1.0);
    }
}
