//! Simulates the optimal martingale for SK at `h = 0.5, s = 0.5` and
//! compares the supremum side of the duality with the optimised infimum.

use spinglass_ldp::martingale::{
    balance, check_feasibility, simulate_optimal, solve_for_simulation, uninverted_value, SdeConfig,
};
use spinglass_ldp::variational::{minimize_gamma, ObjectiveSpec, OptimizerConfig};
use spinglass_ldp::{FieldSpec, MixtureSpec};

fn main() -> spinglass_ldp::Result<()> {
    let (h, s) = (0.5, 0.5);
    let sk = MixtureSpec::sk(1.0);
    let spec = ObjectiveSpec::zero_temp(sk.clone(), FieldSpec::deterministic(h), s)?;
    let rep = minimize_gamma(&spec, &OptimizerConfig { tol: 1e-5, ..Default::default() })?;

    let cfg = SdeConfig { n_paths: 40_000, seed: 7, ..Default::default() };
    let sol = solve_for_simulation(&sk, &rep.best_gamma, &spec.grid, &cfg)?;
    let stats = simulate_optimal(&sk, h, &rep.best_gamma, &sol, &cfg)?;

    let sup = uninverted_value(&stats, s);
    println!("inf value {:.6}", rep.value);
    println!("sup value {:.6} ± {:.1e}", sup.value, sup.stderr);
    let b = balance(&stats);
    println!("balance {:.5} ± {:.1e}", b.value, b.stderr);
    let f = check_feasibility(&stats);
    println!("min constraint margin {:.2e} at r = {} (feasible: {})", f.min_margin.value, f.at_r, f.feasible);
    println!("t,E[alpha^2]");
    for t in [0.0, 0.25, 0.5, 0.75, 0.9] {
        println!("{t},{:.4}", stats.g_at(t));
    }
    Ok(())
}
