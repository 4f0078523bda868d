//! Mixture covariance functions and the constraint checks.

use spinglass_ldp::MixtureSpec;

fn main() -> spinglass_ldp::Result<()> {
    // ξ(r) = r² + 0.5 r⁴
    let mix = MixtureSpec::new(vec![(2, 1.0), (4, 0.5)])?;
    println!("r,xi,xi_prime,xi_second,theta");
    for i in 0..=4 {
        let r = i as f64 / 4.0;
        println!("{r},{},{},{},{}", mix.xi(r), mix.xi_prime(r), mix.xi_second(r), mix.theta(r));
    }
    println!("even mixture: {}", mix.is_even());
    println!("ξ'⁻¹(1.5) = {}", mix.xi_prime_inverse(1.5));

    match MixtureSpec::new(vec![(1, 1.0), (3, -0.2)]) {
        Ok(_) => unreachable!(),
        Err(e) => println!("rejected: {e}"),
    }
    Ok(())
}
