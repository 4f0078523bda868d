//! Nondecreasing step functions `γ` on `[0, 1)` with a floor `γ(0) ≥ s`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixture::MixtureSpec;

/// Maximum number of steps produced by [`GammaPath::project`].
pub const MAX_PROJECTED_STEPS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaPath {
    s_floor: f64,
    /// `(q_k, m_k)` with `q_0 = 0`; `γ = m_k` on `[q_k, q_{k+1})`.
    knots: Vec<(f64, f64)>,
}

impl GammaPath {
    pub fn new(s_floor: f64, knots: Vec<(f64, f64)>) -> Result<Self> {
        let g = Self { s_floor, knots };
        g.validate()?;
        Ok(g)
    }

    pub fn constant(s_floor: f64, m: f64) -> Result<Self> {
        Self::new(s_floor, vec![(0.0, m)])
    }

    /// `γ ≡ s`, the smallest element of the constraint set.
    pub fn floor(s_floor: f64) -> Self {
        Self { s_floor, knots: vec![(0.0, s_floor)] }
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Gamma(msg));
        if !(self.s_floor >= 0.0) || !self.s_floor.is_finite() {
            return bad(format!("floor s = {} must be finite and nonnegative", self.s_floor));
        }
        let Some(&(q0, m0)) = self.knots.first() else {
            return bad("no knots".into());
        };
        if q0 != 0.0 {
            return bad(format!("first knot at {q0}, expected 0"));
        }
        if m0 < self.s_floor {
            return bad(format!("γ(0) = {m0} below the floor {}", self.s_floor));
        }
        for &(q, m) in &self.knots {
            if !q.is_finite() || !m.is_finite() || !(0.0..1.0).contains(&q) {
                return bad(format!("invalid knot ({q}, {m})"));
            }
        }
        for w in self.knots.windows(2) {
            if w[1].0 <= w[0].0 {
                return bad(format!("knot times not increasing at {}", w[1].0));
            }
            if w[1].1 < w[0].1 {
                return bad(format!("values decrease at q = {}", w[1].0));
            }
        }
        Ok(())
    }

    pub fn s_floor(&self) -> f64 {
        self.s_floor
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }

    pub fn knot_times(&self) -> impl Iterator<Item = f64> + '_ {
        self.knots.iter().map(|&(q, _)| q)
    }

    pub fn len(&self) -> usize {
        self.knots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.knots.is_empty()
    }

    /// Index of the step containing `t` (right-continuous).
    pub fn step_index(&self, t: f64) -> usize {
        self.knots.partition_point(|&(q, _)| q <= t).saturating_sub(1)
    }

    pub fn value(&self, t: f64) -> f64 {
        self.knots[self.step_index(t)].1
    }

    pub fn last_value(&self) -> f64 {
        self.knots.last().map(|&(_, m)| m).unwrap_or(self.s_floor)
    }

    /// Start of the last step.
    pub fn last_knot(&self) -> f64 {
        self.knots.last().map(|&(q, _)| q).unwrap_or(0.0)
    }

    /// `(q_k, q_{k+1}, m_k)` with `q_K = 1`.
    pub fn intervals(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.knots.iter().enumerate().map(move |(k, &(q, m))| {
            let end = self.knots.get(k + 1).map(|&(q, _)| q).unwrap_or(1.0);
            (q, end, m)
        })
    }

    /// `½ ∫₀¹ t ξ''(t) γ(t) dt`, exact through `θ' = t ξ''`.
    pub fn correction(&self, mix: &MixtureSpec) -> f64 {
        0.5 * self.intervals().map(|(a, b, m)| m * (mix.theta(b) - mix.theta(a))).sum::<f64>()
    }

    /// `(m_0 − s, m_1 − m_0, …)`.
    pub fn increments(&self) -> Vec<f64> {
        let mut prev = self.s_floor;
        self.knots
            .iter()
            .map(|&(_, m)| {
                let d = m - prev;
                prev = m;
                d
            })
            .collect()
    }

    /// Inverse of [`increments`](Self::increments); negative increments are
    /// clipped to zero.
    pub fn from_increments(s_floor: f64, times: &[f64], deltas: &[f64]) -> Result<Self> {
        if times.len() != deltas.len() {
            return Err(Error::Gamma("times and increments differ in length".into()));
        }
        let mut m = s_floor;
        let knots = times
            .iter()
            .zip(deltas)
            .map(|(&q, &d)| {
                m += d.max(0.0);
                (q, m)
            })
            .collect();
        Self::new(s_floor, knots)
    }

    /// `‖γ − γ'‖_{L¹[0,1)}`.
    pub fn l1_distance(&self, other: &GammaPath) -> f64 {
        let mut cuts: Vec<f64> = self.knot_times().chain(other.knot_times()).collect();
        cuts.push(1.0);
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        cuts.windows(2)
            .map(|w| (w[1] - w[0]) * (self.value(w[0]) - other.value(w[0])).abs())
            .sum()
    }

    /// Drops knots that do not change the value.
    pub fn simplified(&self) -> GammaPath {
        let mut knots: Vec<(f64, f64)> = Vec::with_capacity(self.knots.len());
        for &(q, m) in &self.knots {
            match knots.last() {
                Some(&(_, prev)) if prev == m => {}
                _ => knots.push((q, m)),
            }
        }
        GammaPath { s_floor: self.s_floor, knots }
    }

    /// Pointwise average `(γ + γ')/2`; both paths must share the floor.
    pub fn midpoint(&self, other: &GammaPath) -> GammaPath {
        let mut cuts: Vec<f64> = self.knot_times().chain(other.knot_times()).collect();
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let knots = cuts.iter().map(|&q| (q, 0.5 * (self.value(q) + other.value(q)))).collect();
        GammaPath { s_floor: self.s_floor.min(other.s_floor), knots }.simplified()
    }

    /// L¹ projection of a nondecreasing function onto `n` equal steps: the
    /// median of a monotone function over a cell is its value at the midpoint.
    pub fn project<F: Fn(f64) -> f64>(s_floor: f64, f: F, n: usize) -> Result<Self> {
        let n = n.clamp(1, MAX_PROJECTED_STEPS);
        let mut m = s_floor;
        let knots = (0..n)
            .map(|k| {
                let q = k as f64 / n as f64;
                m = m.max(f((k as f64 + 0.5) / n as f64));
                (q, m)
            })
            .collect();
        Ok(Self::new(s_floor, knots)?.simplified())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(GammaPath::new(0.5, vec![(0.0, 0.4)]).is_err());
        assert!(GammaPath::new(0.0, vec![(0.1, 1.0)]).is_err());
        assert!(GammaPath::new(0.0, vec![(0.0, 1.0), (0.5, 0.5)]).is_err());
        assert!(GammaPath::new(0.0, vec![(0.0, 1.0), (1.0, 2.0)]).is_err());
        let g = GammaPath::new(0.2, vec![(0.0, 0.2), (0.3, 1.0), (0.8, 4.0)]).unwrap();
        assert_eq!(g.value(0.0), 0.2);
        assert_eq!(g.value(0.3), 1.0);
        assert_eq!(g.value(0.79), 1.0);
        assert_eq!(g.value(0.999), 4.0);
    }

    #[test]
    fn correction_matches_quadrature() {
        let mix = MixtureSpec::new(vec![(2, 0.6), (3, 0.4)]).unwrap();
        let g = GammaPath::new(0.0, vec![(0.0, 0.5), (0.4, 1.5), (0.9, 6.0)]).unwrap();
        let n = 200_000;
        let numeric: f64 = (0..n)
            .map(|i| {
                let t = (i as f64 + 0.5) / n as f64;
                0.5 * t * mix.xi_second(t) * g.value(t) / n as f64
            })
            .sum();
        assert!((numeric - g.correction(&mix)).abs() < 1e-6);
    }

    #[test]
    fn increments_round_trip() {
        let g = GammaPath::new(0.3, vec![(0.0, 0.5), (0.4, 1.5), (0.9, 6.0)]).unwrap();
        let d = g.increments();
        assert!((d[0] - 0.2).abs() < 1e-15);
        let times: Vec<f64> = g.knot_times().collect();
        let back = GammaPath::from_increments(0.3, &times, &d).unwrap();
        assert!(back.l1_distance(&g) < 1e-14);
    }

    #[test]
    fn projection_of_smooth_path() {
        let f = |t: f64| 1.0 / (1.1 - t);
        let g = GammaPath::project(0.0, f, 64).unwrap();
        assert!(g.len() <= MAX_PROJECTED_STEPS);
        let n = 100_000;
        let l1: f64 = (0..n)
            .map(|i| {
                let t = (i as f64 + 0.5) / n as f64;
                (f(t) - g.value(t)).abs() / n as f64
            })
            .sum();
        assert!(l1 < 0.05, "{l1}");
    }
}
