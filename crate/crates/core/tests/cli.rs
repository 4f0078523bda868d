use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SK: &str = "mixture = [[2, 1.0]]\n[field]\nh = 0.5\n";

fn run(dir: &Path, config: &str, args: &[&str]) -> Output {
    fs::write(dir.join("run.toml"), config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_spinglass-ldp"))
        .args(args)
        .args(["--config", "run.toml", "--out", "out"])
        .current_dir(dir)
        .output()
        .unwrap()
}

fn out_dir(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap().trim().to_string()
}

#[test]
fn unknown_key_exits_2_naming_it() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(tmp.path(), "mixure = [[2, 1.0]]\n", &["gs"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("mixure"));
    let o = run(tmp.path(), SK, &["gs", "--set", "optimizer.tol=-"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn pde_artifacts_are_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let args = ["pde", "--set", "pde.knots=[[0.0, 0.5], [0.7, 3.0]]"];
    let a = run(tmp.path(), SK, &args);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    let dir = tmp.path().join(out_dir(&a));
    let first = fs::read(dir.join("psi.csv")).unwrap();
    let summary = fs::read_to_string(dir.join("summary.txt")).unwrap();
    assert!(summary.contains("max_abs_psi_x: 1\n"), "{summary}");
    let b = run(tmp.path(), SK, &args);
    assert_eq!(out_dir(&a), out_dir(&b));
    assert_eq!(first, fs::read(dir.join("psi.csv")).unwrap());
}

#[test]
fn gs_writes_result_and_flags_non_convergence() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(tmp.path(), SK, &["gs", "--set", "field.h=0.0"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(tmp.path().join(out_dir(&o)).join("result.txt")).unwrap();
    let gs: f64 = text.lines().next().unwrap().strip_prefix("gs: ").unwrap().parse().unwrap();
    assert!((gs - 1.0794).abs() < 1e-3, "{gs}");
    assert!(text.contains("knot_count") && text.contains("first_order_margin"));

    let o = run(tmp.path(), SK, &["gs", "--set", "optimizer.budget=3"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn rate_below_gs_is_zero_with_warning() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = format!("{SK}[laplace]\ns_grid = [0.0, 0.5, 1.0]\n[sde]\nn_paths = 2000\nn_steps = 200\n[rate]\nr_list = [0.5]\noffsets = []\ndirect = false\n");
    let o = run(tmp.path(), &cfg, &["rate"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("warning"));
    let csv = fs::read_to_string(tmp.path().join(out_dir(&o)).join("rate.csv")).unwrap();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!((row[0], row[2]), ("0.5", "0"));
}

#[test]
fn simulate_n_appends_to_the_run_log() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = format!("{SK}[finite_n]\nn_list = [4, 6]\ns_list = [0.5]\nr_list = [1.0]\nn_disorder = 100\n");
    let a = run(tmp.path(), &cfg, &["simulate-n", "--seed", "5"]);
    assert!(a.status.success());
    run(tmp.path(), &cfg, &["simulate-n", "--seed", "5"]);
    let log = fs::read_to_string(tmp.path().join(out_dir(&a)).join("lambda_n.csv")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], "N,s_or_r,estimate,stderr,n_disorder,seed");
    assert_eq!(lines.len(), 5);
    assert_eq!(lines[1], lines[3]);
    assert!(lines[1].starts_with("4,0.5,") && lines[1].ends_with(",100,5"));
}
