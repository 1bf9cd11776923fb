//! `run`: train every configured seed, then evaluate and aggregate.

use std::fs;
use std::path::{Path, PathBuf};

use cdcma_core::env::ParticleEnv;
use cdcma_core::training::{mean_std, random_policy_returns, TrainConfig, Trainer};
use cdcma_nn::Archive;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::output::{ensure_dir, file_name, write_csv, write_json, ManifestWriter, MetricsRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub config_hash: String,
    pub seed: u64,
    pub variant: String,
    pub episodes: u64,
    pub final_mean: f64,
    pub final_std: f64,
    /// Greedy returns on the shared final-evaluation episodes.
    pub final_returns: Vec<f64>,
    /// Uniform-random joint policy on the same episodes.
    pub random_mean: f64,
    pub random_returns: Vec<f64>,
}

/// Mean, std and standard error of a pooled sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pooled {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
    pub se: f64,
}

impl Pooled {
    pub fn of(xs: &[f64]) -> Self {
        let (mean, std) = mean_std(xs);
        let n = xs.len();
        Self {
            mean,
            std,
            n,
            se: if n == 0 { 0.0 } else { std / (n as f64).sqrt() },
        }
    }

    /// Standard error of the difference of two independent means.
    pub fn diff_se(&self, other: &Pooled) -> f64 {
        (self.se * self.se + other.se * other.se).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub config_hash: String,
    pub variant: String,
    pub seeds: Vec<u64>,
    /// Per-seed final mean rewards, in seed order.
    pub seed_finals: Vec<f64>,
    pub mean_of_finals: f64,
    pub std_of_finals: f64,
    /// Every final-evaluation episode of every seed.
    pub pooled: Pooled,
    pub random: Pooled,
}

impl Aggregate {
    pub fn from_summaries(config_hash: &str, variant: &str, summaries: &[SeedSummary]) -> Self {
        let finals: Vec<f64> = summaries.iter().map(|s| s.final_mean).collect();
        let (m, s) = mean_std(&finals);
        let all: Vec<f64> = summaries.iter().flat_map(|s| s.final_returns.iter().copied()).collect();
        let rnd: Vec<f64> = summaries.iter().flat_map(|s| s.random_returns.iter().copied()).collect();
        Self {
            config_hash: config_hash.to_string(),
            variant: variant.to_string(),
            seeds: summaries.iter().map(|s| s.seed).collect(),
            seed_finals: finals,
            mean_of_finals: m,
            std_of_finals: s,
            pooled: Pooled::of(&all),
            random: Pooled::of(&rnd),
        }
    }
}

pub fn curve_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("curve_seed{seed}.csv"))
}

pub fn summary_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("summary_seed{seed}.json"))
}

pub fn checkpoint_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("checkpoint_seed{seed}.bin"))
}

pub const AGGREGATE_FILE: &str = "aggregate.json";

/// Writes trained weights and optimizer state, tagged with the config hash
/// and seed they came from.
pub fn save_checkpoint(path: &Path, trainer: &Trainer, config_hash: &str, seed: u64) -> Result<()> {
    let mut a = trainer.checkpoint(false);
    a.insert_text("harness.config_hash", config_hash);
    a.insert_u64("harness.seed", seed);
    fs::write(path, a.encode()).map_err(|e| HarnessError::io(path, e))
}

/// Restores a trainer from a checkpoint written by [`save_checkpoint`].
/// The stored hash must match `expected_hash`; `train` may differ from the
/// training configuration only in what the hash does not see (the delay
/// model used for evaluation, for example).
pub fn load_checkpoint(path: &Path, expected_hash: &str, seed: u64, train: TrainConfig) -> Result<Trainer> {
    let bytes = fs::read(path).map_err(|e| HarnessError::io(path, e))?;
    let a = Archive::decode(&bytes)?;
    if a.text("harness.config_hash")? != expected_hash || a.u64("harness.seed")? != seed {
        return Err(HarnessError::Config(format!(
            "{} was written by a different configuration or seed",
            path.display()
        )));
    }
    Ok(Trainer::restore(train, &a)?)
}

fn check_finite(what: &str, xs: &[f64]) -> Result<()> {
    if xs.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(HarnessError::Divergence(format!("{what} is not finite")))
    }
}

/// Trains and evaluates one seed, writing its curve, summary and checkpoint.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64, dir: &Path) -> Result<(SeedSummary, Vec<String>)> {
    let hash = cfg.hash();
    let mut trainer = Trainer::new(cfg.train_config(seed)?)?;
    let mut curve = Vec::new();
    trainer.train(|p| curve.push(MetricsRecord::from_point(&hash, seed, p)))?;
    check_finite("evaluation reward", &curve.iter().map(|r| r.mean_reward).collect::<Vec<_>>())?;
    let (final_mean, final_std, final_returns) = trainer.final_evaluation(cfg.final_eval_episodes)?;
    check_finite("final evaluation reward", &final_returns)?;

    let mut env = ParticleEnv::new(cfg.task_config()?)?;
    let random_returns = random_policy_returns(&mut env, &Trainer::final_eval_seeds(seed, cfg.final_eval_episodes))?;
    let summary = SeedSummary {
        config_hash: hash.clone(),
        seed,
        variant: cfg.variant()?.as_str().to_string(),
        episodes: trainer.episode(),
        final_mean,
        final_std,
        final_returns,
        random_mean: mean_std(&random_returns).0,
        random_returns,
    };

    let (c, s, k) = (curve_path(dir, seed), summary_path(dir, seed), checkpoint_path(dir, seed));
    write_csv(&c, &curve)?;
    write_json(&s, &summary)?;
    save_checkpoint(&k, &trainer, &hash, seed)?;
    Ok((summary, vec![file_name(&c), file_name(&s), file_name(&k)]))
}

/// Runs every seed in order. Stops at the first failure, which is recorded
/// in the manifest alongside the seeds that finished.
pub fn run(cfg: &ExperimentConfig) -> Result<Aggregate> {
    cfg.validate()?;
    let dir = cfg.out_dir();
    ensure_dir(&dir)?;
    let hash = cfg.hash();
    let mut manifest = ManifestWriter::new(&dir, "manifest.json", "run", cfg);
    let mut summaries = Vec::new();
    for &seed in &cfg.seeds {
        match run_seed(cfg, seed, &dir) {
            Ok((s, files)) => {
                summaries.push(s);
                manifest.ok(format!("seed {seed}"), Some(seed), files)?;
            }
            Err(e) => {
                manifest.failed(format!("seed {seed}"), Some(seed), &e);
                return Err(e);
            }
        }
    }
    let agg = Aggregate::from_summaries(&hash, cfg.variant()?.as_str(), &summaries);
    write_json(&dir.join(AGGREGATE_FILE), &agg)?;
    manifest.ok("aggregate", None, vec![AGGREGATE_FILE.into()])?;
    manifest.finish()?;
    Ok(agg)
}
