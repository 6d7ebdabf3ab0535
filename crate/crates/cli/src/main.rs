mod cli;
mod commands;
mod config;
mod family;

use std::process::ExitCode;

use clap::Parser;

use cli::{Cli, Command};
use commands::{Status, UsageError};

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_RUNTIME: u8 = 4;
const EXIT_INCONCLUSIVE: u8 = 5;

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
        if let Some(e) = cause.downcast_ref::<passuntil::Error>() {
            return match e {
                passuntil::Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => EXIT_DATA,
                e if e.is_data_error() => EXIT_DATA,
                _ => EXIT_RUNTIME,
            };
        }
        if let Some(e) = cause.downcast_ref::<std::io::Error>() {
            if e.kind() == std::io::ErrorKind::NotFound {
                return EXIT_DATA;
            }
        }
    }
    EXIT_RUNTIME
}

/// The error chain on one line, skipping causes already quoted by the
/// message above them.
fn describe(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let msg = cause.to_string();
        if out.contains(&msg) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&msg);
    }
    out
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = match config::expand(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let result = match &cli.command {
        Command::Eval(a) => commands::eval(a),
        Command::Fit(a) => commands::fit(a),
        Command::Predict(a) => commands::predict(a),
        Command::Classify(a) => commands::classify(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Report(a) => commands::report(a),
    };
    match result {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::Inconclusive) => ExitCode::from(EXIT_INCONCLUSIVE),
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
