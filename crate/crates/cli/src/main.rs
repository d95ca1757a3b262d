use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = lwinnn_cli::app::Cli::parse();
    match lwinnn_cli::app::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}
