//! Ground-state energies from the zero-temperature variational formula.

use spinglass_ldp::variational::{minimize_gamma, ObjectiveSpec, OptimizerConfig};
use spinglass_ldp::{FieldSpec, MixtureSpec};

fn main() -> spinglass_ldp::Result<()> {
    let cases = [
        ("SK, h = 0", MixtureSpec::sk(1.0), 0.0),
        ("SK, h = 0.5", MixtureSpec::sk(1.0), 0.5),
        ("2+4 mixture, h = 0.3", MixtureSpec::new(vec![(2, 1.0), (4, 0.5)])?, 0.3),
    ];
    for (name, mix, h) in cases {
        let spec = ObjectiveSpec::zero_temp(mix, FieldSpec::deterministic(h), 0.0)?;
        let rep = minimize_gamma(&spec, &OptimizerConfig::default())?;
        println!("{name}: gs = {:.6} ({} knots, margin {:.1e})", rep.value, rep.knot_count, rep.first_order_margin);
    }
    Ok(())
}
