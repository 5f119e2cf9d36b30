use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{Evaluation, RunMetrics, ScoredRecord};
use crate::pipeline::BudgetViolation;
use crate::prompts::{asset_versions, AssetVersion};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const RECORDS_FILE: &str = "records.jsonl";

/// Caller-supplied context stored alongside a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    /// Effective configuration (secrets already removed).
    pub config: serde_json::Value,
    pub backend_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: serde_json::Value,
    pub config_hash: String,
    pub prompt_assets: Vec<AssetVersion>,
    pub backend_ids: Vec<String>,
    pub n_records: usize,
    pub metrics: RunMetrics,
    #[serde(default)]
    pub budget_violations: Vec<BudgetViolation>,
    pub wall_clock_ms: f64,
}

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: line {line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("no {MANIFEST_FILE} in {0}")]
    MissingManifest(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PersistError + '_ {
    move |source| PersistError::Io { path: path.display().to_string(), source }
}

/// Writes `records.jsonl` and `manifest.json` under `dir`.
pub fn persist_run(dir: &Path, eval: &Evaluation, info: &RunInfo) -> Result<Manifest, PersistError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let records_path = dir.join(RECORDS_FILE);
    let file = fs::File::create(&records_path).map_err(io_err(&records_path))?;
    let mut out = BufWriter::new(file);
    for r in &eval.records {
        serde_json::to_writer(&mut out, r).map_err(|e| io_err(&records_path)(e.into()))?;
        out.write_all(b"\n").map_err(io_err(&records_path))?;
    }
    out.flush().map_err(io_err(&records_path))?;

    let manifest = Manifest {
        config_hash: hex::encode(Sha256::digest(info.config.to_string().as_bytes())),
        config: info.config.clone(),
        prompt_assets: asset_versions(),
        backend_ids: info.backend_ids.clone(),
        n_records: eval.records.len(),
        metrics: eval.metrics.clone(),
        budget_violations: eval.violations.clone(),
        wall_clock_ms: eval.wall_clock_ms,
    };
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&manifest_path, text + "\n").map_err(io_err(&manifest_path))?;
    Ok(manifest)
}

pub fn load_run(dir: &Path) -> Result<(Manifest, Vec<ScoredRecord>), PersistError> {
    let manifest_path = dir.join(MANIFEST_FILE);
    if !manifest_path.is_file() {
        return Err(PersistError::MissingManifest(dir.display().to_string()));
    }
    let text = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| PersistError::Parse {
        path: manifest_path.display().to_string(),
        line: e.line(),
        message: e.to_string(),
    })?;

    let records_path = dir.join(RECORDS_FILE);
    let mut records = Vec::new();
    if records_path.is_file() {
        let file = fs::File::open(&records_path).map_err(io_err(&records_path))?;
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(io_err(&records_path))?;
            if line.trim().is_empty() {
                continue;
            }
            let record = serde_json::from_str(&line).map_err(|e| PersistError::Parse {
                path: records_path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })?;
            records.push(record);
        }
    }
    Ok((manifest, records))
}
