//! Runs the full acceptance suite at the pinned tolerances and prints one
//! PASS/FAIL line per criterion. Criterion failures are reported, not
//! raised; errors in the pipeline itself fail the test.

use std::process::ExitCode;

use spinglass_ldp::verify::{run, VerifyOptions};

fn main() -> ExitCode {
    match run(&VerifyOptions::default(), |c| println!("{}", c.summary_line())) {
        Ok(report) => {
            println!("\n{}", report.to_text());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("pipeline error: {e}");
            ExitCode::FAILURE
        }
    }
}
