//! Experiment runner behind the `alloy-lab` binary. Every run writes its
//! tables, reports and plots under `out/<config hash>/` together with a
//! manifest; the same config, seed and code give byte-identical CSVs for any
//! worker count.

pub mod commands;
pub mod config;
pub mod output;
pub mod svg;

use std::path::Path;
use std::time::Instant;

use config::Config;
use output::{config_hash, RunDir, RunManifest};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error(transparent)]
    Numeric(#[from] alloy_lab::Error),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl CliError {
    /// 2 for bad input or unwritable output, 1 for numerical failures;
    /// a completed run whose checks fail also exits with 1.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 2,
            CliError::Numeric(_) => 1,
        }
    }
}

pub struct RunReport {
    pub manifest: RunManifest,
    pub summary: Vec<String>,
}

/// Runs `config` on a pool of `workers` threads and persists the results.
pub fn run(config: &Config, out: &Path, workers: usize) -> Result<RunReport, CliError> {
    let workers = workers.max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let canonical = config.canonical();
    let hash = config_hash(&canonical);
    let seed = config.experiment.seed();
    let started = Instant::now();
    let outcome = pool.install(|| commands::execute(config))?;
    let compute = started.elapsed();

    let mut dir = RunDir::create(out, &hash, seed)?;
    for table in &outcome.tables {
        dir.write_table(table)?;
    }
    for (name, report) in &outcome.reports {
        dir.write_json(name, report)?;
    }
    for (name, svg) in &outcome.plots {
        dir.write_svg(name, svg)?;
    }
    let config_json: serde_json::Value = serde_json::from_str(&canonical).expect("canonical config is JSON");
    let manifest = dir.finish(
        config.experiment.command(),
        workers,
        &config_json,
        &[("compute".to_string(), compute), ("total".to_string(), started.elapsed())],
        outcome.passed,
    )?;
    Ok(RunReport { manifest, summary: outcome.summary })
}
