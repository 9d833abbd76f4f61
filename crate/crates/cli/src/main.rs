use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = randattract_cli::Cli::parse();
    ExitCode::from(randattract_cli::run(&cli))
}
