use std::process::ExitCode;

use clap::Parser;
use cryda_cli::cli::{run, Cli};

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.exit_code() == 2 {
                eprintln!("usage: cryda [--config FILE] [--print-config] <synth|train|sweep|diagnose|report> ...");
            }
            ExitCode::from(e.exit_code())
        }
    }
}
