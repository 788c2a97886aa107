//! `vslr`: synthetic data, manifest checks, pretraining, fine-tuning,
//! evaluation, ablation grids and attention maps from one binary.
//!
//! Settings merge as defaults, then `--config FILE`, then flags. Every run
//! writes the merged settings to `<out>/config.txt`. Failures print one
//! `error: <class>: <detail>` line to stderr and exit nonzero.

mod error;
mod run;
mod settings;

use std::process::ExitCode;

use clap::error::ErrorKind;

use crate::error::CliError;

fn main() -> ExitCode {
    let matches = match settings::command().try_get_matches() {
        Ok(m) => m,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
            eprint!("{e}");
            return ExitCode::from(2);
        }
        Err(e) => {
            let first = e.to_string();
            let line = first
                .lines()
                .next()
                .unwrap_or("invalid arguments")
                .trim_start_matches("error: ")
                .to_string();
            return fail(CliError::usage(line));
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand required");
    match settings::resolve(name, sub).and_then(|r| run::run(&r)) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => fail(e),
    }
}

fn fail(e: CliError) -> ExitCode {
    eprintln!("{e}");
    ExitCode::from(e.exit_code() as u8)
}
