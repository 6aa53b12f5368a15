//! CSV tables and run manifests.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::config::{Experiment, ScenarioConfig};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(u64),
    Float(f64),
    Text(String),
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_owned())
    }
}

/// Seventeen significant digits, enough to round-trip any `f64`.
pub fn format_float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// A CSV table whose first line is a `# schema: <name>/v<version>` comment.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub schema: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl CsvTable {
    pub fn new(schema: &str, header: &[&str]) -> Self {
        Self {
            schema: schema.to_owned(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# schema: {}", self.schema);
        let _ = writeln!(out, "{}", self.header.join(","));
        for row in &self.rows {
            let cells: Vec<String> = row
                .iter()
                .map(|c| match c {
                    Cell::Int(v) => v.to_string(),
                    Cell::Float(v) => format_float(*v),
                    Cell::Text(s) => s.clone(),
                })
                .collect();
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub status: Status,
    pub detail: String,
}

impl Verdict {
    pub fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        let status = if passed { Status::Pass } else { Status::Fail };
        Self {
            name: name.into(),
            status,
            detail: detail.into(),
        }
    }

    pub fn skipped(name: &str, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            status: Status::Skipped,
            detail: detail.into(),
        }
    }

    pub fn passed(&self) -> bool {
        self.status != Status::Fail
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChildSeed {
    pub replication: u64,
    pub stream: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<u64>,
}

/// Everything an experiment produced, before it is written to disk.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub experiment: Experiment,
    /// `(relative path, table)`; the main table is `results.csv`.
    pub tables: Vec<(String, CsvTable)>,
    pub verdicts: Vec<Verdict>,
    pub summary: serde_json::Value,
    pub child_seeds: Vec<ChildSeed>,
}

impl ExperimentOutcome {
    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(Verdict::passed)
    }

    pub fn table(&self, name: &str) -> Option<&CsvTable> {
        self.tables.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub experiment: Experiment,
    pub config: ScenarioConfig,
    pub master_seed: u64,
    pub child_seeds: Vec<ChildSeed>,
    pub code_version: String,
    pub threads: usize,
    /// Seconds since the Unix epoch.
    pub started_at: f64,
    pub finished_at: f64,
    pub wall_time_seconds: f64,
    pub files: Vec<String>,
    pub verdicts: Vec<Verdict>,
    pub summary: serde_json::Value,
}

pub fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

/// Write `contents` to `path` via a temporary file and a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp: PathBuf = path.with_extension("tmp");
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Write all tables and then the manifest into `dir`.
pub fn write_outputs(
    dir: &Path,
    config: &ScenarioConfig,
    outcome: &ExperimentOutcome,
    started_at: f64,
    threads: usize,
) -> Result<Manifest> {
    std::fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    for (name, table) in &outcome.tables {
        let path = dir.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        write_atomic(&path, table.render().as_bytes())?;
        files.push(name.clone());
    }
    let finished_at = unix_now();
    let manifest = Manifest {
        experiment: outcome.experiment,
        config: config.clone(),
        master_seed: config.seed,
        child_seeds: outcome.child_seeds.clone(),
        code_version: env!("CARGO_PKG_VERSION").to_owned(),
        threads,
        started_at,
        finished_at,
        wall_time_seconds: finished_at - started_at,
        files,
        verdicts: outcome.verdicts.clone(),
        summary: outcome.summary.clone(),
    };
    write_atomic(
        &dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?.as_bytes(),
    )?;
    Ok(manifest)
}
