//! Loads a run configuration with overrides, as the command line does.

use spinglass_ldp::config::RunConfig;

fn main() -> spinglass_ldp::Result<()> {
    let text = "mixture = [[2, 1.0]]\nseed = 3\n[field]\nh = 0.5\n[laplace]\ns_grid = [0.0, 0.5, 1.0]\n";
    let cfg = RunConfig::from_toml(text, &["sde.n_paths=20000".into()])?;
    println!("hash {}", cfg.hash());
    print!("{}", cfg.to_toml());
    Ok(())
}
