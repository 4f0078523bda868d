//! Finite-temperature fractional-moment limits approaching `Λ(s)/s`, and
//! the same quantity estimated by enumeration at small `N`.

use spinglass_ldp::finite_n::fractional_moments_mc;
use spinglass_ldp::variational::{fractional_moment_limit, minimize_gamma, ObjectiveSpec, OptimizerConfig};
use spinglass_ldp::{FieldSpec, MixtureSpec};

fn main() -> spinglass_ldp::Result<()> {
    let sk = MixtureSpec::sk(1.0);
    let field = FieldSpec::deterministic(0.5);
    let s = 0.5;
    let zero = minimize_gamma(&ObjectiveSpec::zero_temp(sk.clone(), field.clone(), s)?, &OptimizerConfig::default())?;
    println!("β = ∞: {:.5}", zero.value);
    for beta in [2.0, 4.0, 8.0, 16.0] {
        println!("β = {beta}: {:.5}", fractional_moment_limit(&sk, &field, s, beta)?);
    }

    let betas = [2.0, 4.0, 8.0, 16.0];
    for n in [8, 12] {
        let est = fractional_moments_mc(&sk, &field, n, s, &betas, 400, 1)?;
        let row: Vec<String> = est.iter().map(|e| format!("{:.4}±{:.0e}", e.value, e.stderr)).collect();
        println!("N = {n}: {}", row.join("  "));
    }
    Ok(())
}
