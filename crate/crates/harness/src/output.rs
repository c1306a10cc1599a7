use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{hex, ExperimentConfig};
use crate::HarnessError;

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Table { name: name.to_string(), header: header.iter().map(|h| h.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len(), "row width of table {}", self.name);
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<Vec<u8>, HarnessError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.into_inner().map_err(|e| HarnessError::Io(e.into_error()))
    }
}

/// One pass/fail assertion, tagged with the acceptance criterion it serves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub criterion: u32,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(criterion: u32, name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Check { criterion, name: name.to_string(), passed, detail: detail.into() }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub experiment: String,
    pub tables: Vec<Table>,
    pub checks: Vec<Check>,
    /// Wall-clock seconds per phase; recorded in the manifest only.
    pub timings: Vec<(String, f64)>,
}

impl Outcome {
    pub fn new(experiment: &str) -> Self {
        Outcome { experiment: experiment.to_string(), ..Default::default() }
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&mut self, criterion: u32, name: &str, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check::new(criterion, name, passed, detail));
    }

    pub fn checks_table(&self) -> Table {
        let mut t = Table::new("checks", &["criterion", "name", "passed", "detail"]);
        for c in &self.checks {
            t.push(vec![c.criterion.to_string(), c.name.clone(), c.passed.to_string(), c.detail.clone()]);
        }
        t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub experiment: String,
    pub config_sha256: String,
    pub seed: u64,
    pub version: String,
    pub passed: bool,
    pub files: Vec<FileDigest>,
    pub created_unix: u64,
    pub timings: BTreeMap<String, f64>,
}

/// Writes `config.toml`, one CSV per table, `checks.csv` and `manifest.toml`
/// into `dir`.
pub fn write_bundle(dir: &Path, cfg: &ExperimentConfig, outcome: &Outcome) -> Result<Manifest, HarnessError> {
    std::fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let mut emit = |name: String, bytes: &[u8]| -> Result<(), HarnessError> {
        std::fs::write(dir.join(&name), bytes)?;
        files.push(FileDigest { name, sha256: hex(&Sha256::digest(bytes)) });
        Ok(())
    };
    emit("config.toml".into(), cfg.to_toml().as_bytes())?;
    for t in outcome.tables.iter().chain(std::iter::once(&outcome.checks_table())) {
        emit(format!("{}.csv", t.name), &t.to_csv()?)?;
    }
    let manifest = Manifest {
        experiment: outcome.experiment.clone(),
        config_sha256: cfg.digest(),
        seed: cfg.noise.seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        passed: outcome.passed(),
        files,
        created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        timings: outcome.timings.iter().cloned().collect(),
    };
    let text = toml::to_string(&manifest).expect("manifest serializes");
    std::fs::write(dir.join("manifest.toml"), text)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, HarnessError> {
    let text = std::fs::read_to_string(dir.join("manifest.toml"))?;
    toml::from_str(&text).map_err(|e| HarnessError::Config { path: "manifest.toml".into(), msg: e.to_string() })
}

pub fn read_checks(dir: &Path) -> Result<Vec<Check>, HarnessError> {
    let mut r = csv::Reader::from_path(dir.join("checks.csv"))?;
    r.deserialize().map(|c| c.map_err(HarnessError::from)).collect()
}

pub fn bundle_dir(cfg: &ExperimentConfig, out: Option<&Path>) -> PathBuf {
    out.map(Path::to_path_buf).unwrap_or_else(|| cfg.output.clone())
}
