//! `lpkm`: synthetic data, training, animation, retargeting sweeps and
//! evaluation for the keypoint motion engine.

mod animate;
mod common;
mod eval;
mod gen_data;
mod inspect;
mod sweep;
mod train;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::common::CliResult;

#[derive(Debug, Parser)]
#[command(name = "lpkm", version, about = "Keypoint-driven portrait animation engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    GenData(gen_data::GenDataArgs),
    Train(train::TrainArgs),
    Animate(animate::AnimateArgs),
    RetargetSweep(sweep::SweepArgs),
    Eval(eval::EvalArgs),
    Inspect(inspect::InspectArgs),
}

fn dispatch(cmd: Command) -> CliResult {
    match cmd {
        Command::GenData(a) => gen_data::run(a),
        Command::Train(a) => train::run(a),
        Command::Animate(a) => animate::run(a),
        Command::RetargetSweep(a) => sweep::run(a),
        Command::Eval(a) => eval::run(a),
        Command::Inspect(a) => inspect::run(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("lpkm: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
