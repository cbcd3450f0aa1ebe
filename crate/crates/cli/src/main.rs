use std::process::ExitCode;

use clap::Parser;
use edgepsf_cli::{execute, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("edgepsf: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
