use std::process::ExitCode;

use batchfix_cli::app::render_error;
use batchfix_cli::Cli;
use clap::Parser;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match batchfix_cli::run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("batchfix: {}", render_error(&e));
            ExitCode::FAILURE
        }
    }
}
