//! Solves the zero-temperature PDE for γ ≡ 0 and a step path, and compares
//! the first with the heat-kernel closed form `E|x + √2 Z|`.

use spinglass_ldp::quadrature::erf;
use spinglass_ldp::{solve_zero_temp, FieldSpec, GammaPath, MixtureSpec, PdeGrid};

fn main() -> spinglass_ldp::Result<()> {
    let sk = MixtureSpec::sk(1.0);
    let grid = PdeGrid::for_problem(&sk, &FieldSpec::deterministic(2.0));

    let flat = solve_zero_temp(&sk, &GammaPath::floor(0.0), &grid)?;
    println!("x,psi,closed_form");
    for x in [-2.0f64, -1.0, 0.0, 0.5, 1.0, 2.0] {
        let exact = (4.0 / std::f64::consts::PI).sqrt() * (-x * x / 4.0).exp() + x * erf(x / 2.0);
        println!("{x},{:.8},{exact:.8}", flat.at_zero(x).0);
    }

    let gamma = GammaPath::new(0.0, vec![(0.0, 0.5), (0.6, 2.0), (0.9, 6.0)])?;
    let sol = solve_zero_temp(&sk, &gamma, &grid)?;
    let (psi, psi_x, psi_xx) = sol.at_zero(0.5);
    println!("stepped γ: Ψ(0, 0.5) = {psi:.6}, ∂ₓΨ = {psi_x:.6}, ∂²ₓΨ = {psi_xx:.6}");
    println!("max |∂ₓΨ| over all slices = {}", sol.max_abs_psi_x());
    Ok(())
}
