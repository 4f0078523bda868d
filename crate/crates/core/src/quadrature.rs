//! Gaussian quadrature rules and a few special functions.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// Nodes and weights for `E[f(Z)]`, `Z ~ N(0, 1)`; weights sum to one.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub log_weights: Vec<f64>,
}

impl GaussHermite {
    /// Newton iteration on the physicists' Hermite recurrence, then rescaled
    /// to the standard normal weight.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Hermite order must be positive");
        let pim4 = PI.powf(-0.25);
        let mut x = vec![0.0; n];
        let mut w = vec![0.0; n];
        let m = n.div_ceil(2);
        let nf = n as f64;
        let mut z = 0.0;
        for i in 0..m {
            z = match i {
                0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
                1 => z - 1.14 * nf.powf(0.426) / z,
                2 => 1.86 * z - 0.86 * x[0],
                3 => 1.91 * z - 0.91 * x[1],
                _ => 2.0 * z - x[i - 2],
            };
            let mut pp = 0.0;
            for _ in 0..100 {
                let mut p1 = pim4;
                let mut p2 = 0.0;
                for j in 0..n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
                }
                pp = (2.0 * nf).sqrt() * p2;
                let dz = p1 / pp;
                z -= dz;
                if dz.abs() <= 1e-15 * z.abs().max(1.0) {
                    break;
                }
            }
            x[i] = z;
            x[n - 1 - i] = -z;
            w[i] = 2.0 / (pp * pp);
            w[n - 1 - i] = w[i];
        }
        let sqrt_pi = PI.sqrt();
        let mut nodes: Vec<f64> = x.iter().map(|&v| v * std::f64::consts::SQRT_2).collect();
        let mut weights: Vec<f64> = w.iter().map(|&v| v / sqrt_pi).collect();
        nodes.reverse();
        weights.reverse();
        let total: f64 = weights.iter().sum();
        for v in &mut weights {
            *v /= total;
        }
        let log_weights = weights.iter().map(|v| v.ln()).collect();
        Self { nodes, weights, log_weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn expect<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&z, &w)| w * f(z)).sum()
    }
}

/// Gauss–Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            let mut z = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut pp = 1.0;
            for _ in 0..100 {
                let mut p1 = 1.0;
                let mut p2 = 0.0;
                for j in 0..n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = ((2.0 * jf + 1.0) * z * p2 - jf * p3) / (jf + 1.0);
                }
                pp = nf * (z * p1 - p2) / (z * z - 1.0);
                let dz = p1 / pp;
                z -= dz;
                if dz.abs() < 1e-16 {
                    break;
                }
            }
            nodes[i] = -z;
            nodes[n - 1 - i] = z;
            weights[i] = 2.0 / ((1.0 - z * z) * pp * pp);
            weights[n - 1 - i] = weights[i];
        }
        Self { nodes, weights }
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        half * self.nodes.iter().zip(&self.weights).map(|(&u, &w)| w * f(mid + half * u)).sum::<f64>()
    }
}

pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x - LN_SQRT_2PI).exp()
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// `log Φ(x)`, accurate deep in the left tail.
pub fn log_normal_cdf(x: f64) -> f64 {
    if x > 5.0 {
        return (-libm::erfc(x * FRAC_1_SQRT_2) * 0.5).ln_1p();
    }
    if x > -37.0 {
        return (0.5 * libm::erfc(-x * FRAC_1_SQRT_2)).ln();
    }
    // Mills ratio asymptotics
    let x2 = x * x;
    let inv = 1.0 / x2;
    let series = 1.0 - inv * (1.0 - 3.0 * inv * (1.0 - 5.0 * inv * (1.0 - 7.0 * inv)));
    -0.5 * x2 - LN_SQRT_2PI - (-x).ln() + series.ln()
}

pub fn erf(x: f64) -> f64 {
    libm::erf(x)
}

pub fn log_sum_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

pub fn log_sum_exp_slice(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

/// `ln cosh(x)` without overflow.
pub fn log_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hermite_moments() {
        for n in [8, 20, 40, 64] {
            let gh = GaussHermite::new(n);
            assert!((gh.expect(|_| 1.0) - 1.0).abs() < 1e-14);
            assert!(gh.expect(|z| z).abs() < 1e-13);
            assert!((gh.expect(|z| z * z) - 1.0).abs() < 1e-12);
            assert!((gh.expect(|z| z.powi(4)) - 3.0).abs() < 1e-11);
            assert!((gh.expect(|z| z.powi(6)) - 15.0).abs() < 1e-10);
        }
        let gh = GaussHermite::new(40);
        let mgf = gh.expect(|z| (0.7 * z).exp());
        assert!((mgf - (0.245f64).exp()).abs() < 1e-13);
        assert!(gh.nodes.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn legendre_polynomials() {
        let gl = GaussLegendre::new(12);
        assert!((gl.integrate(0.0, 1.0, |t| t.powi(9)) - 0.1).abs() < 1e-15);
        assert!((gl.integrate(0.0, PI, f64::sin) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn log_cdf_tails() {
        for x in [-50.0, -38.0, -36.9, -10.0, 0.0, 3.0, 8.0] {
            let direct = normal_cdf(x).ln();
            let v = log_normal_cdf(x);
            if x > -37.0 {
                assert!((v - direct).abs() < 1e-12 * direct.abs().max(1.0), "{x}");
            }
            assert!(v.is_finite() && v <= 0.0);
        }
        let a = log_normal_cdf(-37.0 - 1e-9);
        let b = log_normal_cdf(-37.0 + 1e-9);
        assert!((a - b).abs() < 1e-6);
        assert!((log_cosh(800.0) - (800.0 - std::f64::consts::LN_2)).abs() < 1e-12);
    }
}
