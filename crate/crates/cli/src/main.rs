mod commands;
mod config;

use std::process::ExitCode;

use atseg_core::Error;
use clap::Parser;

use config::{Cli, Command, ConfigError};

/// 2 for configuration and validation problems, 3 for unreadable or inconsistent data, 4 otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<ConfigError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<Error>() {
        Some(Error::Manifest { .. } | Error::Split(_) | Error::Argument(_)) => 2,
        Some(
            Error::Data(_)
            | Error::Shape(_)
            | Error::Format(_)
            | Error::UnsupportedDtype { .. }
            | Error::Io { .. },
        ) => 3,
        None => 4,
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = config::resolve(&cli.global)?;
    if let Some(n) = cfg.threads {
        if n == 0 {
            return Err(config::config_error("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| anyhow::anyhow!("thread pool: {e}"))?;
    }
    cfg.hyper
        .validate()
        .map_err(|e| config::config_error(e.to_string()))?;
    match &cli.command {
        Command::Synth(args) => commands::synth(&cfg, args),
        Command::Train => commands::train(&cfg),
        Command::Predict(args) => commands::predict(&cfg, args),
        Command::Evaluate(args) => commands::evaluate(&cfg, args),
        Command::Benchmark(args) => commands::benchmark(&cfg, args),
        Command::Rank => commands::rank(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
