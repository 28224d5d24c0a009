//! Writing an experiment's files. Everything is computed before the output
//! directory is touched, and nothing time- or host-dependent is written.

use crate::config::{hex, ExperimentConfig};
use crate::experiments::{run_experiment, Check};
use crate::CliError;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub experiment: String,
    pub config_hash: String,
    pub seed: u64,
    pub pass: bool,
    pub checks: Vec<Check>,
    pub files: Vec<FileEntry>,
    pub result: serde_json::Value,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub report: RunReport,
    pub report_path: PathBuf,
}

pub fn execute(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunSummary, CliError> {
    cfg.validate()?;
    let out = run_experiment(cfg)?;
    let pass = out.pass();
    let mut artifacts = out.artifacts;
    artifacts.sort_by(|a, b| a.name.cmp(&b.name));
    let files = artifacts.iter().map(|a| FileEntry { name: a.name.clone(), sha256: hex(&Sha256::digest(&a.bytes)) }).collect();
    let name = cfg.experiment.name();
    let report = RunReport {
        experiment: name.to_string(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        pass,
        checks: out.checks,
        files,
        result: out.result,
        config: cfg.clone(),
    };
    let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", out_dir.display()));
    std::fs::create_dir_all(out_dir).map_err(io)?;
    for a in &artifacts {
        std::fs::write(out_dir.join(&a.name), &a.bytes).map_err(io)?;
    }
    let report_path = out_dir.join(format!("{name}_report.json"));
    let mut text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Io(e.to_string()))?;
    text.push('\n');
    std::fs::write(&report_path, text).map_err(io)?;
    Ok(RunSummary { report, report_path })
}
