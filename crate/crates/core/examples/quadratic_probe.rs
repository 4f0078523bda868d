//! `Λ*(gs + δ)/δ²` as `δ → 0`: bounded with a field, growing without one.

use spinglass_ldp::ldp::{lambda_curve, quadratic_probe, CurveConfig};
use spinglass_ldp::martingale::SdeConfig;
use spinglass_ldp::MixtureSpec;

fn main() -> spinglass_ldp::Result<()> {
    let cfg = CurveConfig {
        s_grid: (0..=24).map(|i| 0.05 * i as f64).collect(),
        sde: SdeConfig { n_paths: 10_000, ..Default::default() },
        ..Default::default()
    };
    for h in [0.5, 0.0] {
        let curve = lambda_curve(&MixtureSpec::sk(1.0), h, &cfg)?;
        println!("h = {h}");
        for p in quadratic_probe(&curve, &[0.2, 0.1, 0.05, 0.025])? {
            println!("  δ = {:<6} Λ* = {:.6}  ratio = {:.3}", p.delta, p.rate, p.ratio);
        }
    }
    Ok(())
}
