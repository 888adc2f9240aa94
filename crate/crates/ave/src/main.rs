use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = ave::cli::Cli::parse();
    match ave::cli::run(cli, &mut std::io::stdout().lock()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
