//! Mixture covariance `ξ(r) = Σ_p β_p² r^p` and the external-field law.
//!
//! Coefficients are stored as `β_p²` because only the squares enter the
//! covariance. Evaluation walks the sparse polynomial in increasing degree
//! with a running power, which is exact for the small degrees used here.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{Error, Result};

/// A single violated invariant of a [`MixtureSpec`].
#[derive(Debug, Clone, PartialEq)]
pub enum MixtureError {
    Empty,
    DegreeTooSmall(u32),
    DuplicateDegree(u32),
    NegativeCoefficient { p: u32, value: f64 },
    NonFinite { p: u32 },
    AllZero,
}

impl fmt::Display for MixtureError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MixtureError::Empty => write!(f, "empty mixture"),
            MixtureError::DegreeTooSmall(p) => write!(f, "degree p = {p} must be at least 2"),
            MixtureError::DuplicateDegree(p) => write!(f, "duplicate degree p = {p}"),
            MixtureError::NegativeCoefficient { p, value } => {
                write!(f, "negative coefficient {value} for p = {p}")
            }
            MixtureError::NonFinite { p } => write!(f, "non-finite coefficient for p = {p}"),
            MixtureError::AllZero => write!(f, "all coefficients are zero"),
        }
    }
}

/// Covariance profile of the Gaussian energy field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(u32, f64)>", into = "Vec<(u32, f64)>")]
pub struct MixtureSpec {
    /// `(p, β_p²)` sorted by increasing `p`.
    coeffs: Vec<(u32, f64)>,
}

/// Checks the mixture invariants and reports every violation.
pub fn validate(coeffs: &[(u32, f64)]) -> std::result::Result<(), Vec<MixtureError>> {
    let mut errors = Vec::new();
    if coeffs.is_empty() {
        errors.push(MixtureError::Empty);
        return Err(errors);
    }
    let mut seen = Vec::with_capacity(coeffs.len());
    for &(p, c) in coeffs {
        if p < 2 {
            errors.push(MixtureError::DegreeTooSmall(p));
        }
        if seen.contains(&p) {
            errors.push(MixtureError::DuplicateDegree(p));
        }
        seen.push(p);
        if !c.is_finite() {
            errors.push(MixtureError::NonFinite { p });
        } else if c < 0.0 {
            errors.push(MixtureError::NegativeCoefficient { p, value: c });
        }
    }
    if errors.is_empty() && coeffs.iter().all(|&(_, c)| c == 0.0) {
        errors.push(MixtureError::AllZero);
    }
    if errors.is_empty() {
        Ok(())
    } else {
        Err(errors)
    }
}

impl MixtureSpec {
    pub fn new(coeffs: Vec<(u32, f64)>) -> Result<Self> {
        validate(&coeffs).map_err(Error::Mixture)?;
        let mut coeffs: Vec<_> = coeffs.into_iter().filter(|&(_, c)| c > 0.0).collect();
        coeffs.sort_by_key(|&(p, _)| p);
        Ok(Self { coeffs })
    }

    /// The Sherrington–Kirkpatrick mixture `ξ(r) = β² r²`.
    pub fn sk(beta_sq: f64) -> Self {
        Self::new(vec![(2, beta_sq)]).expect("valid SK mixture")
    }

    pub fn coeffs(&self) -> &[(u32, f64)] {
        &self.coeffs
    }

    pub fn max_degree(&self) -> u32 {
        self.coeffs.last().map(|&(p, _)| p).unwrap_or(2)
    }

    /// True when only even degrees carry weight.
    pub fn is_even(&self) -> bool {
        self.coeffs.iter().all(|&(p, _)| p % 2 == 0)
    }

    fn sum_with<F: Fn(u32, f64, f64) -> f64>(&self, r: f64, term: F) -> f64 {
        let mut acc = 0.0;
        let mut power = 1.0;
        let mut deg = 0u32;
        for &(p, c) in &self.coeffs {
            // running power r^(p-2), shared by ξ, ξ' and ξ''
            while deg + 2 < p {
                power *= r;
                deg += 1;
            }
            acc += term(p, c, power);
        }
        acc
    }

    pub fn xi(&self, r: f64) -> f64 {
        self.sum_with(r, |_, c, pw| c * pw * r * r)
    }

    pub fn xi_prime(&self, r: f64) -> f64 {
        self.sum_with(r, |p, c, pw| c * p as f64 * pw * r)
    }

    pub fn xi_second(&self, r: f64) -> f64 {
        self.sum_with(r, |p, c, pw| c * (p * (p - 1)) as f64 * pw)
    }

    /// `θ(r) = r ξ'(r) − ξ(r)`, an antiderivative of `r ξ''(r)`.
    pub fn theta(&self, r: f64) -> f64 {
        r * self.xi_prime(r) - self.xi(r)
    }

    /// Solves `ξ'(t) = target` for `t ∈ [0, 1]`; `ξ'` is nondecreasing there.
    pub fn xi_prime_inverse(&self, target: f64) -> f64 {
        if target <= 0.0 {
            return 0.0;
        }
        if target >= self.xi_prime(1.0) {
            return 1.0;
        }
        let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
        let mut t = target / self.xi_prime(1.0);
        for _ in 0..100 {
            let f = self.xi_prime(t) - target;
            if f.abs() < 1e-15 {
                return t;
            }
            if f > 0.0 {
                hi = t;
            } else {
                lo = t;
            }
            let d = self.xi_second(t);
            let newton = t - f / d;
            t = if d > 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if hi - lo < 1e-15 {
                break;
            }
        }
        t
    }
}

impl TryFrom<Vec<(u32, f64)>> for MixtureSpec {
    type Error = Error;
    fn try_from(v: Vec<(u32, f64)>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<MixtureSpec> for Vec<(u32, f64)> {
    fn from(m: MixtureSpec) -> Self {
        m.coeffs
    }
}

/// Law of the per-site external field `g_i + h_i`: a centered Gaussian part
/// of variance `gaussian_var` plus a bounded discrete part given by atoms.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSpec {
    #[serde(default)]
    pub h: f64,
    #[serde(default)]
    pub gaussian_var: f64,
    /// `(value, probability)`; empty means a single atom at `h`.
    #[serde(default)]
    pub atoms: Vec<(f64, f64)>,
}

impl FieldSpec {
    pub fn deterministic(h: f64) -> Self {
        Self { h, gaussian_var: 0.0, atoms: vec![(h, 1.0)] }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.h.is_finite() {
            return Err(Error::Field("h must be finite".into()));
        }
        if !(self.gaussian_var >= 0.0) || !self.gaussian_var.is_finite() {
            return Err(Error::Field("gaussian_var must be finite and nonnegative".into()));
        }
        if self.atoms.is_empty() {
            return Ok(());
        }
        let mut total = 0.0;
        for &(v, p) in &self.atoms {
            if !v.is_finite() || !p.is_finite() || p < 0.0 {
                return Err(Error::Field(format!("invalid atom ({v}, {p})")));
            }
            total += p;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Field(format!("atom probabilities sum to {total}, not 1")));
        }
        Ok(())
    }

    /// Atoms of the bounded part, falling back to `(h, 1)`.
    pub fn atoms(&self) -> Vec<(f64, f64)> {
        if self.atoms.is_empty() {
            vec![(self.h, 1.0)]
        } else {
            self.atoms.clone()
        }
    }

    /// `Some(h)` when the field is a single deterministic value.
    pub fn as_deterministic(&self) -> Option<f64> {
        if self.gaussian_var > 0.0 {
            return None;
        }
        let atoms: Vec<_> = self.atoms().into_iter().filter(|&(_, p)| p > 0.0).collect();
        match atoms.as_slice() {
            [(v, _)] => Some(*v),
            _ => None,
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.atoms().iter().map(|&(v, _)| v.abs()).fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monomial_values() {
        let sk = MixtureSpec::sk(1.0);
        assert_eq!(sk.xi(0.5), 0.25);
        for t in [0.0, 0.3, 1.0] {
            assert_eq!(sk.xi_second(t), 2.0);
        }
        for r in [0.0, 0.2, 0.9] {
            assert!((sk.theta(r) - r * r).abs() < 1e-15);
        }
        let m = MixtureSpec::new(vec![(2, 1.0), (3, 1.0)]).unwrap();
        assert_eq!(m.xi_prime(1.0), 5.0);
    }

    #[test]
    fn validation_errors() {
        assert!(validate(&[(2, 1.0)]).is_ok());
        let e = validate(&[(2, -0.1)]).unwrap_err();
        assert_eq!(e[0].to_string(), "negative coefficient -0.1 for p = 2");
        let e = validate(&[]).unwrap_err();
        assert_eq!(e[0].to_string(), "empty mixture");
        let e = validate(&[(2, 1.0), (2, 0.5)]).unwrap_err();
        assert!(matches!(e[0], MixtureError::DuplicateDegree(2)));
        let e = validate(&[(1, 1.0), (3, -1.0)]).unwrap_err();
        assert_eq!(e.len(), 2);
    }

    #[test]
    fn shape_properties() {
        let m = MixtureSpec::new(vec![(2, 0.5), (3, 0.3), (4, 0.2)]).unwrap();
        assert_eq!(m.xi(0.0), 0.0);
        assert_eq!(m.xi_prime(0.0), 0.0);
        assert_eq!(m.theta(0.0), 0.0);
        let grid: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
        for w in grid.windows(2) {
            assert!(m.xi(w[1]) >= m.xi(w[0]));
            assert!(m.xi_prime(w[1]) >= m.xi_prime(w[0]));
            assert!(m.theta(w[1]) >= m.theta(w[0]));
        }
        let eps = 1e-4;
        for &r in &grid[1..100] {
            let fd = (m.xi(r + eps) - m.xi(r - eps)) / (2.0 * eps);
            assert!((fd - m.xi_prime(r)).abs() < 10.0 * eps * eps);
            let fd2 = (m.xi_prime(r + eps) - m.xi_prime(r - eps)) / (2.0 * eps);
            assert!((fd2 - m.xi_second(r)).abs() < 10.0 * eps * eps);
        }
    }

    #[test]
    fn inverse_of_xi_prime() {
        let m = MixtureSpec::new(vec![(2, 0.5), (4, 0.7)]).unwrap();
        for t in [0.0, 0.01, 0.37, 0.9, 0.9999] {
            let back = m.xi_prime_inverse(m.xi_prime(t));
            assert!((back - t).abs() < 1e-12, "{t} vs {back}");
        }
    }

    #[test]
    fn field_spec() {
        let f = FieldSpec::deterministic(0.5);
        f.validate().unwrap();
        assert_eq!(f.as_deterministic(), Some(0.5));
        let bad = FieldSpec { h: 0.0, gaussian_var: 0.0, atoms: vec![(1.0, 0.4), (-1.0, 0.5)] };
        assert!(bad.validate().is_err());
        let mixed = FieldSpec { h: 0.0, gaussian_var: 0.2, atoms: vec![] };
        assert_eq!(mixed.as_deterministic(), None);
    }
}
