//! Run summaries, provenance records and report merging.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, HarnessResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub statistic: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Check {
    /// Passes when `statistic < tolerance`.
    pub fn below(name: impl Into<String>, statistic: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            statistic,
            tolerance,
            pass: statistic < tolerance,
        }
    }

    /// Passes when `statistic > tolerance`.
    pub fn above(name: impl Into<String>, statistic: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            statistic,
            tolerance,
            pass: statistic > tolerance,
        }
    }

    /// A yes/no property, recorded as statistic 1 or 0 against tolerance 1.
    pub fn holds(name: impl Into<String>, ok: bool) -> Self {
        Self {
            name: name.into(),
            statistic: if ok { 1.0 } else { 0.0 },
            tolerance: 1.0,
            pass: ok,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub experiment: String,
    pub config_hash: String,
    pub checks: Vec<Check>,
    pub runtime_s: f64,
}

impl Summary {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub experiment: String,
    pub config_hash: String,
    pub environment_seeds: Vec<u64>,
    pub mc_base_seed: u64,
    pub replicas: usize,
    pub threads: Option<usize>,
    pub rsbm_version: String,
    pub target: String,
    pub outputs: Vec<String>,
}

impl Provenance {
    pub fn new(config: &ExperimentConfig, outputs: Vec<String>) -> Self {
        Self {
            experiment: config.experiment.name().to_string(),
            config_hash: config.hash(),
            environment_seeds: config.env_seeds(),
            mc_base_seed: config.mc.base_seed,
            replicas: config.mc.replicas,
            threads: config.threads(),
            rsbm_version: env!("CARGO_PKG_VERSION").to_string(),
            target: format!("{}-{}", std::env::consts::ARCH, std::env::consts::OS),
            outputs,
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> HarnessResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Merged view of several runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergedReport {
    pub all_pass: bool,
    pub reports: Vec<Summary>,
}

/// Reads `summary.json` from each path (a run directory or the file itself).
pub fn merge_reports(paths: &[PathBuf]) -> HarnessResult<MergedReport> {
    let mut reports = Vec::with_capacity(paths.len());
    for path in paths {
        let file = if path.is_dir() { path.join("summary.json") } else { path.clone() };
        let text = fs::read_to_string(&file)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", file.display())))?;
        let summary: Summary = serde_json::from_str(&text)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", file.display())))?;
        reports.push(summary);
    }
    Ok(MergedReport {
        all_pass: reports.iter().all(Summary::passed),
        reports,
    })
}
