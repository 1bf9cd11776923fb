//! On-disk artifacts: metric CSVs, JSON summaries and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use cdcma_core::training::EvalPoint;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};

/// One learning-curve row per evaluation point. Every row carries the config
/// hash and seed so a file is self-identifying.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub config_hash: String,
    pub seed: u64,
    pub episode: u64,
    pub mean_reward: f64,
    pub std_reward: f64,
    pub full_critic_loss: f64,
    pub gain_critic_loss: f64,
    pub actor_loss: f64,
    pub residual_loss: f64,
    pub action_pred_loss: f64,
    pub dcos_loss: f64,
    pub mean_gain: f64,
    pub mean_cost: f64,
    pub lambda: f64,
    pub request_rate: f64,
    pub policy_gap: f64,
}

impl MetricsRecord {
    pub fn from_point(config_hash: &str, seed: u64, p: &EvalPoint) -> Self {
        let l = &p.losses;
        Self {
            config_hash: config_hash.to_string(),
            seed,
            episode: p.episode,
            mean_reward: p.mean_reward,
            std_reward: p.std_reward,
            full_critic_loss: l.full_critic,
            gain_critic_loss: l.gain_critic,
            actor_loss: l.actor,
            residual_loss: l.residual,
            action_pred_loss: l.action_pred,
            dcos_loss: l.dcos,
            mean_gain: l.mean_gain,
            mean_cost: l.mean_cost,
            lambda: p.lambda,
            request_rate: p.request_rate,
            policy_gap: p.policy_gap,
        }
    }
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| HarnessError::io(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| HarnessError::io(path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| HarnessError::io(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| HarnessError::io(path, e))).collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| HarnessError::io(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub label: String,
    pub seed: Option<u64>,
    pub files: Vec<String>,
    /// `ok` or `failed`.
    pub status: String,
    pub error: Option<String>,
}

/// Index of everything a command wrote. Rewritten after every entry so a
/// failed command still leaves a record of what finished.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub entries: Vec<ManifestEntry>,
    pub complete: bool,
}

pub struct ManifestWriter {
    path: PathBuf,
    pub manifest: Manifest,
}

impl ManifestWriter {
    pub fn new(dir: &Path, name: &str, command: &str, config: &ExperimentConfig) -> Self {
        Self {
            path: dir.join(name),
            manifest: Manifest {
                command: command.to_string(),
                config_hash: config.hash(),
                config: config.clone(),
                entries: Vec::new(),
                complete: false,
            },
        }
    }

    pub fn record(&mut self, entry: ManifestEntry) -> Result<()> {
        self.manifest.entries.push(entry);
        write_json(&self.path, &self.manifest)
    }

    pub fn ok(&mut self, label: impl Into<String>, seed: Option<u64>, files: Vec<String>) -> Result<()> {
        self.record(ManifestEntry {
            label: label.into(),
            seed,
            files,
            status: "ok".into(),
            error: None,
        })
    }

    /// Records a failure. Writing the manifest itself is best effort here:
    /// the original error is the one worth reporting.
    pub fn failed(&mut self, label: impl Into<String>, seed: Option<u64>, err: &HarnessError) {
        let _ = self.record(ManifestEntry {
            label: label.into(),
            seed,
            files: Vec::new(),
            status: "failed".into(),
            error: Some(err.to_string()),
        });
    }

    pub fn finish(&mut self) -> Result<()> {
        self.manifest.complete = self.manifest.entries.iter().all(|e| e.status == "ok");
        write_json(&self.path, &self.manifest)
    }
}

pub fn file_name(path: &Path) -> String {
    path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}
