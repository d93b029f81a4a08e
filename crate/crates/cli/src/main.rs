use std::process::ExitCode;

use clap::Parser;
use hatebench_cli::{execute, Cli};

fn main() -> ExitCode {
    ExitCode::from(execute(Cli::parse()))
}
