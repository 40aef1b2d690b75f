use std::process::ExitCode;

use clap::Parser;
use curvametric::cli::{run, Cli};

fn main() -> ExitCode {
    run(Cli::parse())
}
