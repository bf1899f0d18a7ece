//! `predictimand`: fit, predict, simulate, validate and export weights.
//!
//! Exit codes: 0 success, 1 validation outside tolerance, 2 usage or
//! configuration error, 3 data error, 4 numerical failure. Errors are also
//! printed to stderr as a one-line JSON record.

mod args;
mod commands;
mod error;

use std::fs::File;
use std::io::BufReader;
use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use error::CliError;

fn rerun(r: &args::RerunArgs) -> Result<(), CliError> {
    let file = File::open(&r.config)?;
    let mut recorded: Command = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| CliError::usage(format!("{}: {e}", r.config.display())))?;
    if let Some(out) = &r.out {
        recorded.set_out(out.clone());
    }
    run(recorded)
}

fn run(mut command: Command) -> Result<(), CliError> {
    if let Command::Rerun(r) = &command {
        return rerun(r);
    }
    command.absolutize();
    let out = command.out().expect("every command but rerun has an output directory");
    commands::prepare_out(out)?;
    commands::write_config(out, &command)?;
    match &command {
        Command::Fit(a) => commands::fit(a),
        Command::Predict(a) => commands::predict(a),
        Command::Simulate(a) => commands::simulate_cmd(a),
        Command::Validate(a) => commands::validate_cmd(a),
        Command::Weights(a) => commands::weights_cmd(a),
        Command::Rerun(_) => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("{}", CliError::usage(e.to_string()).to_json());
            return ExitCode::from(2);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.class.exit_code() as u8)
        }
    }
}
