mod args;
mod batch;
mod commands;

use std::process::ExitCode;

use anyhow::Result;
use clap::Parser;
use saliency_core::{Config, Error};

use args::{Cli, Command, ConfigArgs};

const EXIT_FAILURE: u8 = 1;
const EXIT_IO: u8 = 2;
const EXIT_SHAPE: u8 = 3;
const EXIT_EMPTY: u8 = 4;
const EXIT_DIVERGED: u8 = 5;
const EXIT_USAGE: u8 = 64;

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Io { .. } | Error::Parse { .. } => EXIT_IO,
                Error::Shape(_) => EXIT_SHAPE,
                Error::EmptyDataset => EXIT_EMPTY,
                Error::Divergence(_) => EXIT_DIVERGED,
                _ => EXIT_FAILURE,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return EXIT_IO;
        }
    }
    EXIT_FAILURE
}

fn load_config(cli: &Cli, overrides: Option<&ConfigArgs>) -> Result<Config> {
    let mut config = Config::default();
    if let Some(path) = &cli.config {
        config = Config::from_file(path)?;
    }
    if let Some(o) = overrides {
        o.apply(&mut config);
    }
    config.validate()?;
    Ok(config)
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Segment(a) => commands::segment(a, &load_config(cli, Some(&a.config))?),
        Command::Run(a) => commands::run(a, &load_config(cli, Some(&a.config))?),
        Command::Eval(a) => commands::eval(a, &load_config(cli, Some(&a.config))?),
        Command::TrainToy(a) => commands::train_toy(a, &load_config(cli, Some(&a.config))?),
        Command::Infer(a) => commands::infer(a),
        Command::Bench(a) => commands::bench(a, &load_config(cli, Some(&a.config))?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
