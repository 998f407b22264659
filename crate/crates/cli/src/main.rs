use std::process::ExitCode;

use clap::Parser;
use eos_edit_cli::{exit_code, run, Cli};

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = Cli::parse();
    match run(cli, argv, &mut std::io::stdout().lock()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("eos-edit: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
