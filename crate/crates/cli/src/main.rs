use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = gath_cli::Cli::parse();
    match gath_cli::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gath: error[{}]: {e}", e.kind());
            ExitCode::FAILURE
        }
    }
}
