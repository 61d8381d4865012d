mod args;
mod commands;
mod manifest;

use std::process::ExitCode;

use clap::Parser;
use ensemble_logreg::par::Exec;
use ensemble_logreg::{Error, ErrorKind};

use args::Cli;
use manifest::RunManifest;

const USAGE: u8 = 2;

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Structural => 3,
        ErrorKind::Numeric => 4,
        ErrorKind::Io => 5,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let exec = if cli.sequential {
        Exec::Sequential
    } else {
        Exec::default()
    };
    let command = match (cli.manifest, cli.command) {
        (Some(path), None) => {
            let loaded = RunManifest::read(&path).and_then(|m| m.check_inputs().map(|()| m));
            match loaded {
                Ok(m) => {
                    let mut cmd = m.config;
                    if let Some(out) = cli.replay_out {
                        cmd.common_mut().out = out;
                    }
                    cmd
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(exit_code(&e));
                }
            }
        }
        (None, Some(cmd)) => cmd,
        (Some(_), Some(_)) => {
            eprintln!("error: --manifest replays a recorded command and cannot be combined with a subcommand");
            return ExitCode::from(USAGE);
        }
        (None, None) => {
            eprintln!("error: a subcommand or --manifest is required (see --help)");
            return ExitCode::from(USAGE);
        }
    };

    let result = commands::run(&command, exec);
    let (outcome, error) = match result {
        Ok(o) => (Some(o), None),
        Err(e) => (None, Some(e)),
    };
    if let Some(outcome) = outcome {
        let written = RunManifest::new(&command, &outcome.inputs, &outcome.outputs)
            .and_then(|m| m.write(&command.common().out));
        if let Err(e) = written {
            eprintln!("error: {e}");
            return ExitCode::from(exit_code(&e));
        }
        print!("{}", outcome.summary);
        return ExitCode::SUCCESS;
    }
    let e = error.expect("either outcome or error");
    eprintln!("error: {e}");
    ExitCode::from(exit_code(&e))
}
