use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use spinglass_ldp::config::RunConfig;
use spinglass_ldp::finite_n::{ground_states, lambda_from_samples, tail_from_samples};
use spinglass_ldp::ldp::{lambda_curve, quadratic_probe, rate_direct, rate_legendre, LaplaceCurve, RateResult};
use spinglass_ldp::variational::{minimize, ObjectiveSpec};
use spinglass_ldp::verify::{self, VerifyOptions};
use spinglass_ldp::{Error, PdeSolution, Terminal};

#[derive(Parser)]
#[command(version, about = "Ground states, Laplace transforms and large-deviation rates of mixed p-spin glasses")]
struct Cli {
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config entry, e.g. `--set sde.n_paths=20000`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, env = "SPINGLASS_LDP_WORKERS", global = true)]
    workers: Option<usize>,
    #[arg(long, default_value = "runs", global = true)]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Solve the PDE for the `[pde]` path and write the slices.
    Pde,
    /// Ground-state energy.
    Gs,
    /// The curve `Λ(s)` on `laplace.s_grid`.
    Laplace,
    /// Finite-temperature fractional-moment limits.
    Fractional,
    /// Upper rate function at `rate.r_list` and `gs + rate.offsets`.
    Rate,
    /// `Λ*(gs + δ)/δ²` for `probe.deltas`.
    ProbeQuadratic,
    /// Finite-N enumeration estimates.
    SimulateN,
    /// Run the acceptance suite.
    Verify,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Pde => "pde",
            Command::Gs => "gs",
            Command::Laplace => "laplace",
            Command::Fractional => "fractional",
            Command::Rate => "rate",
            Command::ProbeQuadratic => "probe-quadratic",
            Command::SimulateN => "simulate-n",
            Command::Verify => "verify",
        }
    }
}

/// Ran to completion but an optimisation did not converge.
struct NotConverged;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_)
        | Error::Invalid(_)
        | Error::Mixture(_)
        | Error::Field(_)
        | Error::Gamma(_)
        | Error::Grid(_)
        | Error::TooLarge { .. } => 2,
        _ => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(w) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(w).build_global() {
            eprintln!("error: cannot start {w} workers: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(Ok(dir)) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Ok(Err(NotConverged)) => {
            eprintln!("error: optimisation did not converge; partial results written");
            ExitCode::from(3)
        }
        Err(Failure::Failed(dir)) => {
            eprintln!("acceptance criteria failed; see {}", dir.join("verify.txt").display());
            ExitCode::from(1)
        }
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

enum Failure {
    Error(Error),
    Failed(PathBuf),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Error(e.into())
    }
}

fn load(cli: &Cli) -> Result<RunConfig, Error> {
    let path = cli.config.as_ref().ok_or_else(|| Error::Config("--config is required".into()))?;
    let mut overrides = cli.overrides.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={seed}"));
    }
    RunConfig::load(path, &overrides)
}

fn output_dir(cli: &Cli, cmd: Command, tag: &str) -> std::io::Result<PathBuf> {
    let dir = cli.out.join(format!("{}-{tag}", cmd.name()));
    fs::create_dir_all(&dir)?;
    let now = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_secs());
    fs::write(dir.join("meta.txt"), format!("command: {}\ncreated_unix: {now}\n", cmd.name()))?;
    Ok(dir)
}

fn run(cli: &Cli) -> Result<Result<PathBuf, NotConverged>, Failure> {
    if let Command::Verify = cli.command {
        let seed = cli.seed.unwrap_or(0);
        let dir = output_dir(cli, cli.command, &format!("seed{seed}"))?;
        let report = verify::run(&VerifyOptions { seed, ..Default::default() }, |c| eprintln!("{}", c.summary_line()))?;
        fs::write(dir.join("verify.txt"), report.to_text())?;
        return if report.all_passed() { Ok(Ok(dir)) } else { Err(Failure::Failed(dir)) };
    }
    let cfg = load(cli)?;
    let dir = output_dir(cli, cli.command, &cfg.hash())?;
    fs::write(dir.join("config.toml"), cfg.to_toml())?;
    let converged = match cli.command {
        Command::Pde => pde(&cfg, &dir)?,
        Command::Gs => gs(&cfg, &dir)?,
        Command::Laplace => {
            let curve = curve(&cfg)?;
            write_curve(&curve, &dir)?;
            curve.points.iter().all(|p| p.converged)
        }
        Command::Fractional => fractional(&cfg, &dir)?,
        Command::Rate => rate(&cfg, &dir)?,
        Command::ProbeQuadratic => probe(&cfg, &dir)?,
        Command::SimulateN => simulate_n(&cfg, &dir)?,
        Command::Verify => unreachable!(),
    };
    Ok(if converged { Ok(dir) } else { Err(NotConverged) })
}

fn pde(cfg: &RunConfig, dir: &Path) -> Result<bool, Failure> {
    let gamma = cfg.pde_gamma()?;
    let sol = PdeSolution::solve(&cfg.mixture, &gamma, &cfg.grid(), cfg.terminal())?;
    let mut w = std::io::BufWriter::new(fs::File::create(dir.join("psi.csv"))?);
    sol.write_csv(&mut w, cfg.pde.every)?;
    w.flush()?;
    let (psi, psi_x, _) = sol.at_zero(cfg.field.h);
    let summary = format!(
        "psi_0_h: {psi}\npsi_x_0_h: {psi_x}\nmax_abs_psi_x: {}\nx_max: {}\nslices: {}\n",
        sol.max_abs_psi_x(),
        sol.x_max(),
        sol.slice_times().len()
    );
    fs::write(dir.join("summary.txt"), summary)?;
    Ok(true)
}

fn gs(cfg: &RunConfig, dir: &Path) -> Result<bool, Failure> {
    let spec = ObjectiveSpec::zero_temp(cfg.mixture.clone(), cfg.field.clone(), 0.0)?.with_grid(cfg.grid());
    let rep = minimize(&spec, &cfg.optimizer, None)?;
    fs::write(dir.join("result.txt"), format!("gs: {}\n{}", rep.value, rep.to_text()))?;
    Ok(rep.converged)
}

fn curve(cfg: &RunConfig) -> Result<LaplaceCurve, Error> {
    lambda_curve(&cfg.mixture, cfg.h()?, &cfg.curve())
}

fn write_curve(curve: &LaplaceCurve, dir: &Path) -> std::io::Result<()> {
    let mut out = String::from("s,value,lambda,lambda_prime,lambda_prime_stderr,chi,chi_stderr,balance,balance_stderr,margin,converged\n");
    for p in &curve.points {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            p.s,
            p.value,
            p.lambda,
            p.lambda_prime.value,
            p.lambda_prime.stderr,
            p.chi.value,
            p.chi.stderr,
            p.balance.value,
            p.balance.stderr,
            p.first_order_margin,
            p.converged
        );
    }
    fs::write(dir.join("lambda.csv"), out)?;
    fs::write(dir.join("summary.txt"), format!("gs: {}\ns_underline: {}\npoints: {}\n", curve.gs, curve.s_underline, curve.points.len()))
}

fn fractional(cfg: &RunConfig, dir: &Path) -> Result<bool, Failure> {
    let s = cfg.fractional.s;
    let mut out = String::from("beta,value,first_order_margin,converged\n");
    let mut all = true;
    let modes = cfg.fractional.betas.iter().map(|&b| (b.to_string(), Terminal::FiniteTemp(b)));
    for (label, mode) in modes.chain([("inf".to_string(), Terminal::ZeroTemp)]) {
        let spec = ObjectiveSpec::new(cfg.mixture.clone(), cfg.field.clone(), s, mode)?;
        let spec = match &cfg.grid {
            Some(g) => spec.with_grid(g.clone()),
            None => spec,
        };
        let rep = minimize(&spec, &cfg.optimizer, None)?;
        all &= rep.converged;
        let _ = writeln!(out, "{label},{},{},{}", rep.value, rep.first_order_margin, rep.converged);
    }
    fs::write(dir.join("fractional.csv"), out)?;
    Ok(all)
}

fn rate_row(out: &mut String, r: &RateResult) {
    let (q, qse) = r.quotient.map_or((f64::NAN, f64::NAN), |q| (q.value, q.stderr));
    let _ = writeln!(
        out,
        "{},{:?},{},{},{},{},{},{},{}",
        r.r, r.method, r.rate, r.stderr, r.s_star, r.balance_term, q, qse, r.lower_bound_only
    );
}

fn rate(cfg: &RunConfig, dir: &Path) -> Result<bool, Failure> {
    let curve = curve(cfg)?;
    write_curve(&curve, dir)?;
    let mut rs = cfg.rate.r_list.clone();
    rs.extend(cfg.rate.offsets.iter().map(|o| curve.gs + o));
    let mut out = String::from("r,method,rate,stderr,s_star,balance,quotient,quotient_stderr,lower_bound_only\n");
    for r in rs {
        if r < curve.gs {
            eprintln!("warning: r = {r} is below gs = {}; the rate is 0", curve.gs);
        }
        let leg = rate_legendre(&curve, r);
        if leg.lower_bound_only {
            eprintln!("warning: r = {r} lies beyond the slopes of the curve; the rate is a lower bound");
        }
        rate_row(&mut out, &leg);
        if cfg.rate.direct {
            rate_row(&mut out, &rate_direct(&cfg.mixture, curve.h, r, &curve, &cfg.curve())?);
        }
    }
    fs::write(dir.join("rate.csv"), out)?;
    Ok(curve.points.iter().all(|p| p.converged))
}

fn probe(cfg: &RunConfig, dir: &Path) -> Result<bool, Failure> {
    let curve = curve(cfg)?;
    write_curve(&curve, dir)?;
    let mut out = String::from("delta,rate,ratio,stderr\n");
    for p in quadratic_probe(&curve, &cfg.probe.deltas)? {
        let _ = writeln!(out, "{},{},{},{}", p.delta, p.rate, p.ratio, p.stderr);
    }
    fs::write(dir.join("probe.csv"), out)?;
    Ok(curve.points.iter().all(|p| p.converged))
}

fn simulate_n(cfg: &RunConfig, dir: &Path) -> Result<bool, Failure> {
    let h = cfg.h()?;
    let block = &cfg.finite_n;
    let open = |name: &str| -> std::io::Result<fs::File> {
        let path = dir.join(name);
        let fresh = !path.exists();
        let mut f = OpenOptions::new().create(true).append(true).open(path)?;
        if fresh {
            writeln!(f, "N,s_or_r,estimate,stderr,n_disorder,seed")?;
        }
        Ok(f)
    };
    let mut lam = open("lambda_n.csv")?;
    let mut tail = open("tail_n.csv")?;
    for &n in &block.n_list {
        let ls = ground_states(&cfg.mixture, h, n, block.n_disorder, cfg.seed)?;
        for &s in &block.s_list {
            writeln!(lam, "{}", lambda_from_samples(&ls, n, s).csv_row(s, cfg.seed))?;
        }
        for &r in &block.r_list {
            let t = tail_from_samples(&ls, n, r);
            if t.one_sided {
                eprintln!("warning: N = {n}, r = {r}: no sample reached r; reporting the one-sided bound");
            }
            writeln!(tail, "{}", t.estimate.csv_row(r, cfg.seed))?;
        }
    }
    Ok(true)
}
