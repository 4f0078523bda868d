//! The upper rate function `Λ*(r)` for SK at `h = 0.5` by the Legendre
//! transform of the curve, checked against the direct balance formula.

use spinglass_ldp::ldp::{lambda_curve, rate_direct, rate_legendre, CurveConfig};
use spinglass_ldp::martingale::SdeConfig;
use spinglass_ldp::MixtureSpec;

fn main() -> spinglass_ldp::Result<()> {
    let sk = MixtureSpec::sk(1.0);
    let cfg = CurveConfig {
        s_grid: (0..=12).map(|i| 0.1 * i as f64).collect(),
        sde: SdeConfig { n_paths: 20_000, ..Default::default() },
        ..Default::default()
    };
    let curve = lambda_curve(&sk, 0.5, &cfg)?;
    println!("gs = {:.5}", curve.gs);
    println!("r,legendre,direct,direct_stderr,s_star,quotient");
    for off in [0.0, 0.05, 0.1, 0.2] {
        let r = curve.gs + off;
        let leg = rate_legendre(&curve, r);
        let dir = rate_direct(&sk, 0.5, r, &curve, &cfg)?;
        let q = dir.quotient.map_or(f64::NAN, |q| q.value);
        println!("{r:.4},{:.5},{:.5},{:.1e},{:.3},{q:.5}", leg.rate, dir.rate, dir.stderr, dir.s_star);
    }
    Ok(())
}
