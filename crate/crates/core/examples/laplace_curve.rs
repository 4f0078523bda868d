//! `Λ(s)` for SK with and without a field on a coarse grid, with the
//! ground state and the end of the flat piece.

use spinglass_ldp::ldp::{lambda_curve, CurveConfig};
use spinglass_ldp::martingale::SdeConfig;
use spinglass_ldp::MixtureSpec;

fn main() -> spinglass_ldp::Result<()> {
    let cfg = CurveConfig {
        s_grid: (0..=8).map(|i| 0.125 * i as f64).collect(),
        sde: SdeConfig { n_paths: 20_000, ..Default::default() },
        ..Default::default()
    };
    for h in [0.0, 0.5] {
        let curve = lambda_curve(&MixtureSpec::sk(1.0), h, &cfg)?;
        println!("h = {h}: gs = {:.5}, s_underline = {}", curve.gs, curve.s_underline);
        println!("s,lambda,lambda_prime,stderr");
        for p in &curve.points {
            println!("{},{:.6},{:.5},{:.1e}", p.s, p.lambda, p.lambda_prime.value, p.lambda_prime.stderr);
        }
    }
    Ok(())
}
