//! Tables, run summaries and their atomic persistence.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use tempfile::NamedTempFile;

use sebm_core::stationary::Thresholds;

use crate::config::RunConfig;

/// Full round-trip precision: 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// A CSV table held in memory until the run finishes.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, header: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self {
            name: name.to_string(),
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len(), "row width in {}", self.name);
        self.rows.push(row);
    }

    /// Appends a row of numbers.
    pub fn push_values(&mut self, values: &[f64]) {
        self.push(values.iter().copied().map(fmt_f64).collect());
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn to_csv(&self) -> Result<Vec<u8>, csv::Error> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(Vec::new());
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        w.into_inner().map_err(|e| e.into_error().into())
    }
}

/// A value with its Monte Carlo standard error when it has one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Scalar {
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stderr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    /// SHA-256 of the canonical JSON form of seed, model, noise and
    /// experiment. Output directory and thread count are excluded because
    /// they do not affect results.
    pub config_hash: String,
    pub version: String,
    pub seed: u64,
}

impl Provenance {
    pub fn of(config: &RunConfig) -> Self {
        #[derive(Serialize)]
        struct Hashed<'a> {
            seed: u64,
            model: &'a sebm_core::solver::ModelConfig,
            noise: &'a sebm_core::noise::NoiseSpec,
            experiment: &'a crate::config::Experiment,
        }
        let canonical = serde_json::to_vec(&Hashed {
            seed: config.seed,
            model: &config.model,
            noise: &config.noise,
            experiment: &config.experiment,
        })
        .expect("configuration serializes");
        Self {
            config_hash: format!("{:x}", Sha256::digest(&canonical)),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: config.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub kind: String,
    pub passed: bool,
    pub checks: Vec<Check>,
    pub scalars: BTreeMap<String, Scalar>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<Thresholds>,
    /// Interpretation notes attached to the results.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    pub provenance: Provenance,
}

impl RunSummary {
    pub fn new(kind: &str, provenance: Provenance) -> Self {
        Self {
            kind: kind.to_string(),
            passed: true,
            checks: Vec::new(),
            scalars: BTreeMap::new(),
            thresholds: None,
            notes: Vec::new(),
            provenance,
        }
    }

    pub fn check(&mut self, name: &str, passed: bool, detail: impl Into<String>) {
        self.passed &= passed;
        self.checks.push(Check {
            name: name.to_string(),
            passed,
            detail: detail.into(),
        });
    }

    pub fn scalar(&mut self, name: &str, value: f64) {
        self.scalars.insert(name.to_string(), Scalar { value, stderr: None });
    }

    pub fn estimate(&mut self, name: &str, value: f64, stderr: f64) {
        self.scalars.insert(
            name.to_string(),
            Scalar {
                value,
                stderr: Some(stderr),
            },
        );
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.scalars.get(name).map(|s| s.value)
    }

    pub fn check_named(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub summary: RunSummary,
    pub tables: Vec<Table>,
}

impl RunOutput {
    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }
}

fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> std::io::Result<PathBuf> {
    let target = dir.join(name);
    let mut tmp = NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(&target).map_err(|e| e.error)?;
    Ok(target)
}

/// Writes every table as `<name>` and the summary as `summary.json` into
/// `dir`, each through a temporary file renamed into place.
pub fn emit_outputs(dir: &Path, output: &RunOutput) -> std::io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::with_capacity(output.tables.len() + 1);
    for table in &output.tables {
        let bytes = table.to_csv().map_err(std::io::Error::other)?;
        written.push(write_atomic(dir, &table.name, &bytes)?);
    }
    let mut json = serde_json::to_vec_pretty(&output.summary).map_err(std::io::Error::other)?;
    json.push(b'\n');
    written.push(write_atomic(dir, "summary.json", &json)?);
    Ok(written)
}
