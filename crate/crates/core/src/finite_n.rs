//! Finite-`N` oracle: dense Gaussian disorder, exhaustive enumeration of
//! `H_N(σ) = H'_N(σ) + Σ b_i σ_i` over `{±1}^N`, and disorder averages.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mixture::{FieldSpec, MixtureSpec};

pub const MAX_N: usize = 24;
/// Limit for mixtures containing a `p ≥ 4` term.
pub const MAX_N_HIGH_DEGREE: usize = 16;

#[derive(Debug, Clone)]
pub struct Tensor {
    pub p: u32,
    /// `β_p N^{-(p-1)/2}`.
    pub scale: f64,
    /// Row-major `N^p` standard Gaussians.
    pub data: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct DisorderSample {
    pub n: usize,
    pub tensors: Vec<Tensor>,
    /// Per-site external field.
    pub field: Vec<f64>,
}

fn check_size(mix: &MixtureSpec, n: usize) -> Result<()> {
    let max = if mix.max_degree() >= 4 { MAX_N_HIGH_DEGREE } else { MAX_N };
    if n == 0 || n > max {
        return Err(Error::TooLarge { n, max });
    }
    Ok(())
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn sample_disorder(mix: &MixtureSpec, n: usize, field: &FieldSpec, seed: u64) -> Result<DisorderSample> {
    sample_disorder_stream(mix, n, field, seed, 0)
}

/// Disorder sample number `stream` of the run seeded by `seed`.
pub fn sample_disorder_stream(
    mix: &MixtureSpec,
    n: usize,
    field: &FieldSpec,
    seed: u64,
    stream: u64,
) -> Result<DisorderSample> {
    check_size(mix, n)?;
    field.validate()?;
    let mut rng = stream_rng(seed, stream);
    let tensors = mix
        .coeffs()
        .iter()
        .map(|&(p, beta_sq)| Tensor {
            p,
            scale: beta_sq.sqrt() * (n as f64).powf(-0.5 * (p as f64 - 1.0)),
            data: (0..n.pow(p)).map(|_| StandardNormal.sample(&mut rng)).collect(),
        })
        .collect();
    let atoms = field.atoms();
    let sd = field.gaussian_var.sqrt();
    let field = (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut v = atoms[atoms.len() - 1].0;
            for &(a, p) in &atoms {
                acc += p;
                if u < acc {
                    v = a;
                    break;
                }
            }
            let g: f64 = StandardNormal.sample(&mut rng);
            v + sd * g
        })
        .collect();
    Ok(DisorderSample { n, tensors, field })
}

impl DisorderSample {
    /// `H'_N(σ)` by direct contraction.
    pub fn coupling_energy(&self, sigma: &[f64]) -> f64 {
        let n = self.n;
        self.tensors
            .iter()
            .map(|t| {
                let mut v = t.data.clone();
                for _ in 0..t.p {
                    let len = v.len() / n;
                    let next: Vec<f64> =
                        (0..len).map(|i| (0..n).map(|j| v[i * n + j] * sigma[j]).sum()).collect();
                    v = next;
                }
                t.scale * v[0]
            })
            .sum()
    }

    pub fn energy(&self, sigma: &[f64]) -> f64 {
        self.coupling_energy(sigma) + self.field.iter().zip(sigma).map(|(b, s)| b * s).sum::<f64>()
    }

    /// Walks all `2^N` configurations in Gray-code order, returning
    /// `max H_N` and `log(2^{-N} Σ_σ e^{β H_N(σ)})` for each `β`.
    pub fn enumerate(&self, betas: &[f64]) -> Enumeration {
        let n = self.n;
        let mut a = vec![0.0; n * n];
        let lin = &self.field;
        let mut constant = 0.0;
        let mut high = Vec::new();
        for t in &self.tensors {
            match t.p {
                2 => {
                    for i in 0..n {
                        constant += t.scale * t.data[i * n + i];
                        for j in 0..n {
                            if i != j {
                                a[i * n + j] += t.scale * (t.data[i * n + j] + t.data[j * n + i]);
                            }
                        }
                    }
                }
                _ => high.push(t.clone()),
            }
        }
        let high = DisorderSample { n, tensors: high, field: vec![0.0; n] };
        let mut sigma = vec![1.0; n];
        let mut local: Vec<f64> = (0..n).map(|k| (0..n).map(|j| a[k * n + j]).sum()).collect();
        let mut quad = constant + 0.5 * local.iter().sum::<f64>() + lin.iter().sum::<f64>();
        let mut acc = Streaming::new(betas);
        let total = 1u64 << n;
        for step in 0..total {
            if step > 0 {
                let k = step.trailing_zeros() as usize;
                let s = sigma[k];
                quad -= 2.0 * s * (local[k] + lin[k]);
                let row = &a[k * n..(k + 1) * n];
                for (f, &akj) in local.iter_mut().zip(row) {
                    *f -= 2.0 * akj * s;
                }
                sigma[k] = -s;
            }
            let e = if high.tensors.is_empty() { quad } else { quad + high.coupling_energy(&sigma) };
            acc.push(e);
        }
        acc.finish(n)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Enumeration {
    pub max_energy: f64,
    pub log_z: Vec<f64>,
}

struct Streaming<'a> {
    betas: &'a [f64],
    max: f64,
    reference: Vec<f64>,
    sums: Vec<f64>,
}

impl<'a> Streaming<'a> {
    fn new(betas: &'a [f64]) -> Self {
        Self { betas, max: f64::NEG_INFINITY, reference: vec![f64::NEG_INFINITY; betas.len()], sums: vec![0.0; betas.len()] }
    }

    fn push(&mut self, e: f64) {
        self.max = self.max.max(e);
        for ((&b, r), s) in self.betas.iter().zip(&mut self.reference).zip(&mut self.sums) {
            let x = b * e;
            if x > *r {
                *s = *s * (*r - x).exp() + 1.0;
                *r = x;
            } else {
                *s += (x - *r).exp();
            }
        }
    }

    fn finish(self, n: usize) -> Enumeration {
        let ln2n = n as f64 * std::f64::consts::LN_2;
        let log_z = self.reference.iter().zip(&self.sums).map(|(r, s)| r + s.ln() - ln2n).collect();
        Enumeration { max_energy: self.max, log_z }
    }
}

/// `L_N = max_σ H_N(σ)/N`.
pub fn ground_state_exact(d: &DisorderSample) -> f64 {
    d.enumerate(&[]).max_energy / d.n as f64
}

/// Enumerates `n_disorder` independent samples in parallel, in sample order.
pub fn enumerate_samples(
    mix: &MixtureSpec,
    field: &FieldSpec,
    n: usize,
    betas: &[f64],
    n_disorder: usize,
    seed: u64,
) -> Result<Vec<Enumeration>> {
    check_size(mix, n)?;
    field.validate()?;
    (0..n_disorder)
        .into_par_iter()
        .map(|k| Ok(sample_disorder_stream(mix, n, field, seed, k as u64)?.enumerate(betas)))
        .collect()
}

pub fn ground_states(mix: &MixtureSpec, h: f64, n: usize, n_disorder: usize, seed: u64) -> Result<Vec<f64>> {
    let e = enumerate_samples(mix, &FieldSpec::deterministic(h), n, &[], n_disorder, seed)?;
    Ok(e.iter().map(|x| x.max_energy / n as f64).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EmpiricalEstimate {
    pub value: f64,
    pub stderr: f64,
    pub n_disorder: usize,
    pub n: usize,
}

impl EmpiricalEstimate {
    pub fn csv_row(&self, x: f64, seed: u64) -> String {
        format!("{},{},{},{},{},{}", self.n, x, self.value, self.stderr, self.n_disorder, seed)
    }
}

/// `log mean exp(a_i)` and its leave-one-out values.
fn log_mean_exp_jackknife(a: &[f64]) -> (f64, Vec<f64>) {
    let n = a.len();
    let m = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = a.iter().map(|x| (x - m).exp()).collect();
    let total: f64 = w.iter().sum();
    let full = m + (total / n as f64).ln();
    if n < 2 {
        return (full, Vec::new());
    }
    let loo = w
        .iter()
        .zip(a)
        .map(|(wi, &ai)| {
            let rest = total - wi;
            if rest > 1e-12 * total {
                m + (rest / (n - 1) as f64).ln()
            } else {
                // the left-out sample carried essentially all the mass
                let others: Vec<f64> = a.iter().filter(|&&x| x != ai).cloned().collect();
                crate::quadrature::log_sum_exp_slice(&others) - ((n - 1) as f64).ln()
            }
        })
        .collect();
    (full, loo)
}

fn jackknife_stderr(loo: &[f64]) -> f64 {
    let n = loo.len() as f64;
    if loo.len() < 2 {
        return f64::NAN;
    }
    let mean = loo.iter().sum::<f64>() / n;
    ((n - 1.0) / n * loo.iter().map(|x| (x - mean).powi(2)).sum::<f64>()).sqrt()
}

/// `(1/N) log mean exp(sN L_N)` over the given ground states.
pub fn lambda_from_samples(ground_states: &[f64], n: usize, s: f64) -> EmpiricalEstimate {
    let nn = n as f64;
    let a: Vec<f64> = ground_states.iter().map(|l| s * nn * l).collect();
    let (full, loo) = log_mean_exp_jackknife(&a);
    EmpiricalEstimate {
        value: full / nn,
        stderr: jackknife_stderr(&loo) / nn,
        n_disorder: ground_states.len(),
        n,
    }
}

/// Monte Carlo estimate of `Λ_N(s) = (1/N) log E exp(sN L_N)`.
pub fn empirical_lambda(
    mix: &MixtureSpec,
    h: f64,
    n: usize,
    s: f64,
    n_disorder: usize,
    seed: u64,
) -> Result<EmpiricalEstimate> {
    if !(s >= 0.0) {
        return Err(Error::Invalid(format!("s = {s} must be nonnegative")));
    }
    Ok(lambda_from_samples(&ground_states(mix, h, n, n_disorder, seed)?, n, s))
}

/// `(1/sN) log E[Z_N(β)^{s/β}]` with `Z_N(β) = 2^{-N} Σ_σ e^{βH_N(σ)}`,
/// for each `β`, from one set of disorder samples.
pub fn fractional_moments_mc(
    mix: &MixtureSpec,
    field: &FieldSpec,
    n: usize,
    s: f64,
    betas: &[f64],
    n_disorder: usize,
    seed: u64,
) -> Result<Vec<EmpiricalEstimate>> {
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::Invalid(format!("s = {s} must lie in (0, 1)")));
    }
    if betas.iter().any(|&b| !(b > 0.0)) {
        return Err(Error::Invalid("β must be positive".into()));
    }
    let e = enumerate_samples(mix, field, n, betas, n_disorder, seed)?;
    let sn = s * n as f64;
    Ok(betas
        .iter()
        .enumerate()
        .map(|(j, &b)| {
            let a: Vec<f64> = e.iter().map(|x| s / b * x.log_z[j]).collect();
            let (full, loo) = log_mean_exp_jackknife(&a);
            EmpiricalEstimate { value: full / sn, stderr: jackknife_stderr(&loo) / sn, n_disorder, n }
        })
        .collect())
}

pub fn fractional_moment_mc(
    mix: &MixtureSpec,
    field: &FieldSpec,
    n: usize,
    s: f64,
    beta: f64,
    n_disorder: usize,
    seed: u64,
) -> Result<EmpiricalEstimate> {
    Ok(fractional_moments_mc(mix, field, n, s, &[beta], n_disorder, seed)?[0])
}

/// `(1/N) log E[Z_N(1)] = ξ(1)/2 + log E cosh(b)` for the normalised
/// partition function.
pub fn annealed_free_energy(mix: &MixtureSpec, field: &FieldSpec) -> f64 {
    let gh = crate::quadrature::GaussHermite::new(40);
    let sd = field.gaussian_var.sqrt();
    let ecosh: f64 = field.atoms().iter().map(|&(v, p)| p * gh.expect(|z| (v + sd * z).cosh())).sum();
    0.5 * mix.xi(1.0) + ecosh.ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailEstimate {
    /// `−(1/N) log P[L_N ≥ r]`.
    pub estimate: EmpiricalEstimate,
    pub hits: usize,
    /// No sample reached `r`: `estimate.value` is the lower bound `log(n_disorder)/N`.
    pub one_sided: bool,
}

pub fn tail_from_samples(ground_states: &[f64], n: usize, r: f64) -> TailEstimate {
    let total = ground_states.len();
    let hits = ground_states.iter().filter(|&&l| l >= r).count();
    let nn = n as f64;
    let (value, stderr, one_sided) = if hits == 0 {
        ((total as f64).ln() / nn, f64::NAN, true)
    } else {
        let p = hits as f64 / total as f64;
        (-p.ln() / nn, ((1.0 - p) / (p * total as f64)).sqrt() / nn, false)
    };
    TailEstimate { estimate: EmpiricalEstimate { value, stderr, n_disorder: total, n }, hits, one_sided }
}

pub fn tail_probability(
    mix: &MixtureSpec,
    h: f64,
    n: usize,
    r: f64,
    n_disorder: usize,
    seed: u64,
) -> Result<TailEstimate> {
    Ok(tail_from_samples(&ground_states(mix, h, n, n_disorder, seed)?, n, r))
}

/// Monte Carlo `E[H'_N(σ)H'_N(τ)]` for the given pairs against `Nξ(σ·τ/N)`.
pub fn covariance_check(
    mix: &MixtureSpec,
    n: usize,
    pairs: &[(Vec<f64>, Vec<f64>)],
    n_samples: usize,
    seed: u64,
) -> Result<Vec<CovarianceCheck>> {
    check_size(mix, n)?;
    let zero = FieldSpec::deterministic(0.0);
    let products: Vec<Vec<f64>> = (0..n_samples)
        .into_par_iter()
        .map(|k| {
            let d = sample_disorder_stream(mix, n, &zero, seed, k as u64)?;
            Ok(pairs.iter().map(|(a, b)| d.coupling_energy(a) * d.coupling_energy(b)).collect())
        })
        .collect::<Result<_>>()?;
    Ok(pairs
        .iter()
        .enumerate()
        .map(|(j, (a, b))| {
            let xs: Vec<f64> = products.iter().map(|p| p[j]).collect();
            let m = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / m;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0);
            let overlap = a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / n as f64;
            CovarianceCheck {
                overlap,
                expected: n as f64 * mix.xi(overlap),
                estimate: mean,
                stderr: (var / m).sqrt(),
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CovarianceCheck {
    pub overlap: f64,
    pub expected: f64,
    pub estimate: f64,
    pub stderr: f64,
}

pub fn random_configuration(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_max(d: &DisorderSample) -> f64 {
        (0..1u32 << d.n)
            .map(|bits| {
                let s: Vec<f64> = (0..d.n).map(|i| if bits >> i & 1 == 1 { -1.0 } else { 1.0 }).collect();
                d.energy(&s)
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    #[test]
    fn one_spin_closed_form() {
        let d = sample_disorder(&MixtureSpec::sk(1.0), 1, &FieldSpec::deterministic(-0.3), 4).unwrap();
        let g = d.tensors[0].data[0];
        assert_eq!(d.coupling_energy(&[1.0]), d.coupling_energy(&[-1.0]));
        assert!((ground_state_exact(&d) - (g + 0.3)).abs() < 1e-15);
    }

    #[test]
    fn gray_code_matches_naive() {
        let mix = MixtureSpec::new(vec![(2, 1.0), (3, 0.5)]).unwrap();
        for seed in 0..5 {
            let d = sample_disorder(&mix, 10, &FieldSpec::deterministic(0.2), seed).unwrap();
            assert!((d.enumerate(&[]).max_energy - naive_max(&d)).abs() < 1e-10);
            let sk = sample_disorder(&MixtureSpec::sk(1.0), 10, &FieldSpec::deterministic(0.7), seed).unwrap();
            assert!((sk.enumerate(&[]).max_energy - naive_max(&sk)).abs() < 1e-10);
        }
    }

    #[test]
    fn partition_function_matches_sum() {
        let d = sample_disorder(&MixtureSpec::sk(1.0), 6, &FieldSpec::deterministic(0.4), 9).unwrap();
        let z: f64 = (0..64u32)
            .map(|bits| {
                let s: Vec<f64> = (0..6).map(|i| if bits >> i & 1 == 1 { -1.0 } else { 1.0 }).collect();
                (2.0 * d.energy(&s)).exp()
            })
            .sum::<f64>()
            / 64.0;
        assert!((d.enumerate(&[2.0]).log_z[0] - z.ln()).abs() < 1e-10);
    }

    #[test]
    fn flip_symmetry_without_field() {
        let mix = MixtureSpec::new(vec![(2, 1.0), (4, 0.5)]).unwrap();
        let d = sample_disorder(&mix, 6, &FieldSpec::deterministic(0.0), 2).unwrap();
        let s = [1.0, -1.0, 1.0, 1.0, -1.0, -1.0];
        let flipped: Vec<f64> = s.iter().map(|x| -x).collect();
        assert!((d.energy(&s) - d.energy(&flipped)).abs() < 1e-12);
    }

    #[test]
    fn covariance_matches_mixture() {
        let mix = MixtureSpec::new(vec![(2, 0.5), (3, 0.7)]).unwrap();
        let mut rng = stream_rng(5, 1);
        let pairs: Vec<_> = (0..4).map(|_| (random_configuration(4, &mut rng), random_configuration(4, &mut rng))).collect();
        for c in covariance_check(&mix, 4, &pairs, 40_000, 8).unwrap() {
            assert!((c.estimate - c.expected).abs() < 4.0 * c.stderr, "{c:?}");
        }
    }

    #[test]
    fn size_limits() {
        let f = FieldSpec::deterministic(0.0);
        assert!(sample_disorder(&MixtureSpec::sk(1.0), 25, &f, 0).is_err());
        let quartic = MixtureSpec::new(vec![(4, 1.0)]).unwrap();
        assert!(sample_disorder(&quartic, 17, &f, 0).is_err());
    }

    #[test]
    fn deterministic_in_seed() {
        let mix = MixtureSpec::sk(1.0);
        let a = empirical_lambda(&mix, 0.5, 6, 0.5, 50, 11).unwrap();
        let b = empirical_lambda(&mix, 0.5, 6, 0.5, 50, 11).unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert_eq!(empirical_lambda(&mix, 0.5, 6, 0.0, 50, 11).unwrap().value, 0.0);
    }

    #[test]
    fn jackknife_of_equal_values_is_zero() {
        let e = lambda_from_samples(&[0.4; 10], 4, 1.0);
        assert!((e.value - 0.4).abs() < 1e-14 && e.stderr < 1e-12);
    }

    #[test]
    fn tail_edge_cases() {
        let ls = [0.1, 0.5, 0.9];
        let t = tail_from_samples(&ls, 4, -10.0);
        assert_eq!((t.hits, t.estimate.value), (3, 0.0));
        let t = tail_from_samples(&ls, 4, 2.0);
        assert!(t.one_sided && t.hits == 0);
    }
}
