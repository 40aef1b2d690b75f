//! Runs every acceptance criterion in order, one line each, and fails the
//! target if any criterion fails its checks or its time budget.

use std::io::Write;
use std::process::ExitCode;

use curvametric::suites::{run_suite, SUITES};

fn main() -> ExitCode {
    // `cargo test -- --list` and filters are not meaningful here.
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let mut out = std::io::stdout();
    let mut failed = Vec::new();
    for (name, _, _) in SUITES {
        for r in run_suite(name).expect("known suite") {
            let _ = writeln!(out, "{}", r.line());
            let _ = out.flush();
            if !r.passed {
                failed.push(r.id);
            }
        }
    }
    if failed.is_empty() {
        let _ = writeln!(out, "acceptance: all {} criteria passed", SUITES.len());
        ExitCode::SUCCESS
    } else {
        let _ = writeln!(out, "acceptance: failed criteria {failed:?}");
        ExitCode::FAILURE
    }
}
