use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod args;
mod commands;

use args::{EnergyProbeArgs, InspectArgs, SweepArgs, TrainArgs};

/// Deep GCN training lab.
#[derive(Debug, Parser)]
#[command(name = "gcnflow", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one model and write its metrics log and checkpoint.
    Train(TrainArgs),
    /// Depth x seed grid over {glorot, iso} x {no skips, dynamic rewiring}.
    Sweep(SweepArgs),
    /// Print graph statistics and isometric initialization bounds.
    Inspect(InspectArgs),
    /// Print per-layer Dirichlet energies at initialization and after training.
    EnergyProbe(EnergyProbeArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::new().filter_level(log::LevelFilter::Warn).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Inspect(a) => commands::inspect(a),
        Command::EnergyProbe(a) => commands::energy_probe(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
