use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use slca_cli::commands::{cmd_cka, cmd_probe, cmd_report, cmd_run};
use slca_cli::config::LoadedConfig;

#[derive(Parser)]
#[command(name = "slca", about = "Slow-learner continual learning with classifier alignment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every mode and seed of an experiment config.
    Run { config: PathBuf },
    /// Linear-probe accuracy per stage checkpoint.
    Probe {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        checkpoints: Vec<PathBuf>,
    },
    /// Feature CKA for every checkpoint pair.
    Cka {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        checkpoints: Vec<PathBuf>,
    },
    /// Print aggregate files as a table.
    Report {
        #[arg(required = true)]
        aggregates: Vec<PathBuf>,
    },
}

fn load(path: &PathBuf) -> Result<LoadedConfig, ExitCode> {
    LoadedConfig::load(path).map_err(|e| {
        eprintln!("error: {e:#}");
        ExitCode::from(2)
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config } => match load(config) {
            Ok(cfg) => cmd_run(&cfg).map(|aggs| print!("{}", slca_cli::aggregate::table(&aggs))),
            Err(code) => return code,
        },
        Command::Probe {
            config,
            seed,
            out,
            checkpoints,
        } => match load(config) {
            Ok(cfg) => cmd_probe(&cfg, *seed, checkpoints, out).map(|_| ()),
            Err(code) => return code,
        },
        Command::Cka {
            config,
            seed,
            out,
            checkpoints,
        } => match load(config) {
            Ok(cfg) => cmd_cka(&cfg, *seed, checkpoints, out).map(|_| ()),
            Err(code) => return code,
        },
        Command::Report { aggregates } => cmd_report(aggregates).map(|t| print!("{t}")),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
