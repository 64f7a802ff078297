//! `eikplan`: data generation, training, planning and evaluation.

mod commands;
mod manifest;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use manifest::{Flags, RunManifest, Usage};

#[derive(Parser)]
#[command(name = "eikplan", version, about = "Neural motion planning with viscous Eikonal time fields")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample start/goal pairs for each environment.
    GenData(Flags),
    /// Train a time field with the progressive speed schedule.
    Train(Flags),
    /// Plan one query with a trained field.
    Plan(Flags),
    /// Plan every pair of a dataset and report metrics.
    Eval(Flags),
    /// Write arrival times from one source on a grid as CSV and PGM.
    FieldExport(Flags),
    /// Compare a trained field with the grid solver.
    FmmCompare(Flags),
}

fn run(cmd: Command) -> anyhow::Result<()> {
    let (name, flags) = match cmd {
        Command::GenData(f) => ("gen-data", f),
        Command::Train(f) => ("train", f),
        Command::Plan(f) => ("plan", f),
        Command::Eval(f) => ("eval", f),
        Command::FieldExport(f) => ("field-export", f),
        Command::FmmCompare(f) => ("fmm-compare", f),
    };
    let m = RunManifest::resolve(name, flags)?;
    match name {
        "gen-data" => commands::gen_data(&m),
        "train" => commands::train(&m),
        "plan" => commands::plan_cmd(&m),
        "eval" => commands::eval(&m),
        "field-export" => commands::field_export(&m),
        _ => commands::compare(&m),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.chain().any(|e| e.downcast_ref::<Usage>().is_some()) {
        return 1;
    }
    let numerical = err
        .chain()
        .filter_map(|e| e.downcast_ref::<eikplan_core::Error>())
        .any(|e| e.is_numerical());
    if numerical {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
