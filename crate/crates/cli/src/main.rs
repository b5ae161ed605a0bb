use std::path::PathBuf;
use std::process::ExitCode;

use alloy_lab_cli::config::{default_for, Config};
use alloy_lab_cli::{run, CliError};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "alloy-lab", version, about = "Numerical experiments for random alloy-type Schrödinger operators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON configuration; the subcommand's defaults when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "runs")]
    out: PathBuf,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    /// Reduced sizes for a quick end-to-end run.
    #[arg(long, global = true)]
    smoke: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Inverse of the Toeplitz matrix and its norm bound.
    ToeplitzCheck,
    /// Conditional densities of the transformed coordinates.
    DensityExamples,
    /// Expected eigenvalue counts in small windows.
    Wegner,
    /// Sample spread of the finite-volume integrated density of states.
    Ids,
    /// Good-box probabilities and resolvent decay.
    Msa,
    /// Spectral averaging along single coordinates.
    Spav,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::ToeplitzCheck => "toeplitz-check",
            Command::DensityExamples => "density-examples",
            Command::Wegner => "wegner",
            Command::Ids => "ids",
            Command::Msa => "msa",
            Command::Spav => "spav",
        }
    }
}

fn load(cli: &Cli) -> Result<Config, CliError> {
    let name = cli.command.name();
    let mut config = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            Config::parse(&text)?
        }
        None => default_for(name).expect("every subcommand has defaults"),
    };
    if config.experiment.command() != name {
        return Err(CliError::Config(format!(
            "config describes a {} experiment, not {name}",
            config.experiment.command()
        )));
    }
    if let Some(seed) = cli.seed {
        config.experiment.set_seed(seed);
    }
    if cli.smoke {
        config.experiment.smoke();
    }
    Ok(config)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = load(&cli).and_then(|config| run(&config, &cli.out, cli.workers));
    match result {
        Ok(report) => {
            for line in &report.summary {
                println!("{line}");
            }
            let dir = cli.out.join(&report.manifest.config_hash);
            println!("{} -> {}", if report.manifest.passed { "passed" } else { "FAILED" }, dir.display());
            if report.manifest.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
