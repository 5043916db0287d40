use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use leakgraph_cli::{error_line, run, Cli, EXIT_ERROR};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("error[usage]: {}", first.trim_start_matches("error: "));
            return ExitCode::from(EXIT_ERROR as u8);
        }
    };
    match run(&cli) {
        Ok(outcome) => {
            println!("{}", outcome.summary);
            ExitCode::from(outcome.exit_code as u8)
        }
        Err(err) => {
            eprintln!("{}", error_line(&err));
            ExitCode::from(EXIT_ERROR as u8)
        }
    }
}
