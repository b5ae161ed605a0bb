//! Run directories, CSV tables and the run manifest.
//!
//! Every CSV row carries the config hash and seed. Floats are written with
//! Rust's shortest round-trip formatting, so tables parse back bit-exactly.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

/// Hex SHA-256 of the canonical configuration.
pub fn config_hash(canonical: &str) -> String {
    Sha256::digest(canonical.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

/// A CSV cell.
pub enum Cell {
    Float(f64),
    Int(i64),
    Text(String),
    Missing,
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Float(x)
    }
}
impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::Int(x as i64)
    }
}
impl From<i64> for Cell {
    fn from(x: i64) -> Self {
        Cell::Int(x)
    }
}
impl From<u32> for Cell {
    fn from(x: u32) -> Self {
        Cell::Int(i64::from(x))
    }
}
impl From<bool> for Cell {
    fn from(x: bool) -> Self {
        Cell::Text(x.to_string())
    }
}
impl From<&str> for Cell {
    fn from(x: &str) -> Self {
        Cell::Text(x.to_string())
    }
}
impl From<Option<f64>> for Cell {
    fn from(x: Option<f64>) -> Self {
        x.map_or(Cell::Missing, Cell::Float)
    }
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Float(x) => format!("{x:?}"),
            Cell::Int(x) => x.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Missing => String::new(),
        }
    }
}

/// A table whose rows are prefixed with `config_hash,seed`.
pub struct Table {
    pub name: String,
    header: Vec<String>,
    rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Self { name: name.to_string(), header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_csv(&self, hash: &str, seed: u64) -> Result<Vec<u8>, CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["config_hash".to_string(), "seed".to_string()];
        header.extend(self.header.iter().cloned());
        w.write_record(&header)?;
        for row in &self.rows {
            let mut record = vec![hash.to_string(), seed.to_string()];
            record.extend(row.iter().map(Cell::render));
            w.write_record(&record)?;
        }
        w.into_inner().map_err(|e| CliError::Io(e.to_string()))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub tool_version: String,
    pub workers: usize,
    pub files: Vec<String>,
    pub timings_seconds: Vec<(String, f64)>,
    pub passed: bool,
    pub config: serde_json::Value,
}

/// `out/<hash>/`, created if needed.
pub struct RunDir {
    pub path: PathBuf,
    pub hash: String,
    pub seed: u64,
    files: Vec<String>,
}

impl RunDir {
    pub fn create(out: &Path, hash: &str, seed: u64) -> Result<Self, CliError> {
        let path = out.join(hash);
        fs::create_dir_all(&path)?;
        Ok(Self { path, hash: hash.to_string(), seed, files: Vec::new() })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        fs::write(self.path.join(name), bytes)?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn write_table(&mut self, table: &Table) -> Result<(), CliError> {
        let bytes = table.to_csv(&self.hash, self.seed)?;
        self.write(&format!("{}.csv", table.name), &bytes)
    }

    /// A JSON document with the config hash and seed embedded alongside `body`.
    pub fn write_json<T: Serialize>(&mut self, name: &str, body: &T) -> Result<(), CliError> {
        let doc = serde_json::json!({ "config_hash": self.hash, "seed": self.seed, "report": body });
        let text = serde_json::to_string_pretty(&doc).map_err(|e| CliError::Io(e.to_string()))?;
        self.write(&format!("{name}.json"), text.as_bytes())
    }

    pub fn write_svg(&mut self, name: &str, svg: &str) -> Result<(), CliError> {
        self.write(&format!("{name}.svg"), svg.as_bytes())
    }

    pub fn files(&self) -> &[String] {
        &self.files
    }

    pub fn finish(
        mut self,
        command: &str,
        workers: usize,
        config: &serde_json::Value,
        timings: &[(String, Duration)],
        passed: bool,
    ) -> Result<RunManifest, CliError> {
        let manifest = RunManifest {
            command: command.to_string(),
            config_hash: self.hash.clone(),
            seed: self.seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            workers,
            files: self.files.clone(),
            timings_seconds: timings.iter().map(|(k, d)| (k.clone(), d.as_secs_f64())).collect(),
            passed,
            config: config.clone(),
        };
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Io(e.to_string()))?;
        fs::write(self.path.join("manifest.json"), text)?;
        self.files.push("manifest.json".into());
        Ok(manifest)
    }
}
