use std::process::ExitCode;

use clap::Parser;

mod commands;
mod exit;

use commands::Cli;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            if !e.use_stderr() {
                // --help / --version
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let msg = e.kind().to_string();
            let _ = e.print();
            return exit::report_usage(&msg);
        }
    };
    env_logger::Builder::new()
        .filter_level(cli.log_level())
        .format_timestamp(None)
        .format_target(false)
        .parse_default_env()
        .init();
    match commands::run(cli) {
        Ok(code) => code,
        Err(e) => exit::report(&e),
    }
}
