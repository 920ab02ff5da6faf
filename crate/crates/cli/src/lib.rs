//! Command-line front end: feature files, checkpoints, config files and the
//! `haad` subcommands.

pub mod args;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod featfile;

use std::ffi::OsString;

use clap::Parser;

use args::{Cli, Command};
use error::{CliError, EXIT_OK, EXIT_USAGE};

/// Runs one invocation and returns the process exit code.
pub fn run(argv: Vec<OsString>) -> u8 {
    let argv = match config::expand_args(argv) {
        Ok(a) => a,
        Err(e) => return report(e.into()),
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match &cli.command {
        Command::Gen(a) => commands::gen(a),
        Command::Train(a) => commands::train_cmd(a),
        Command::Eval(a) => commands::eval(a),
        Command::Rollout(a) => commands::rollout_cmd(a),
        Command::Diagnose(a) => commands::diagnose(a),
        Command::Gradcheck(a) => commands::gradcheck_cmd(a),
        Command::Bench(a) => commands::bench(a),
        Command::Sweep(a) => commands::sweep_cmd(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => report(e),
    }
}

fn report(e: CliError) -> u8 {
    eprintln!("error: {e}");
    e.exit_code()
}
