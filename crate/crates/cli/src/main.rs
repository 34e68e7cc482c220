//! `rocr` binary entry point.

mod args;
mod commands;
mod editcfg;
mod error;

use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command};
use error::CliError;

fn run(command: &Command) -> error::Result<()> {
    match command {
        Command::Covariance(a) => commands::covariance(a),
        Command::Edit(a) => commands::edit(a),
        Command::Eval(a) => commands::eval(a),
        Command::Compare(a) => commands::compare(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Fixtures(a) => commands::fixtures(a),
    }
}

fn emit_error(err: &CliError, json: bool) {
    if json {
        let payload = serde_json::json!({
            "error": err.kind(),
            "exit_code": err.exit_code(),
            "message": err.to_string(),
        });
        eprintln!("{payload}");
    } else {
        eprintln!("error: {err}");
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                std::process::exit(0);
            }
            eprintln!("{e}");
            std::process::exit(1);
        }
    };
    if let Err(err) = run(&cli.command) {
        emit_error(&err, cli.json_errors);
        std::process::exit(err.exit_code());
    }
}
