use std::process::ExitCode;

use clap::Parser;
use tilecast::cli::{run, Cli};

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("tilecast: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
