mod args;
mod config;
mod eval;
mod infer;
mod synth;
mod train;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => synth::run(a).map(|_| 0),
        Command::Train(a) => train::run(a).map(|_| 0),
        Command::Infer(a) => infer::run(a),
        Command::Eval(a) => eval::run(a).map(|_| 0),
    };
    match result {
        Ok(0) => ExitCode::SUCCESS,
        Ok(_) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
