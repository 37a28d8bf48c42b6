use std::process::ExitCode;

use clap::Parser;
use foodseg_cli::args::Cli;
use foodseg_cli::failure::{EXIT_INTERNAL, EXIT_USAGE};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match std::panic::catch_unwind(|| foodseg_cli::run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(failure)) => {
            eprintln!("error: {failure:#}");
            failure.exit_code()
        }
        Err(_) => ExitCode::from(EXIT_INTERNAL),
    }
}
