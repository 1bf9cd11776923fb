//! `eval-zero-shot`: agents trained under easy delays, evaluated unchanged
//! under every delay difficulty.

use cdcma_core::channel::Difficulty;
use cdcma_core::training::mean_std;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::output::{ensure_dir, write_csv, ManifestWriter};
use crate::run::{checkpoint_path, load_checkpoint};

/// Signed percentage change of `metric` relative to the easy-delay value:
/// `(metric − easy) / |easy| × 100`. Infinite or NaN when `easy` is zero.
pub fn delta_pct(metric: f64, easy: f64) -> f64 {
    (metric - easy) / easy.abs() * 100.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotRow {
    pub config_hash: String,
    pub variant: String,
    pub difficulty: String,
    /// Pooled over every seed and evaluation episode.
    pub mean: f64,
    pub std: f64,
    pub episodes: usize,
    pub delta_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotSeedRow {
    pub config_hash: String,
    pub seed: u64,
    pub difficulty: String,
    pub mean: f64,
    pub std: f64,
}

pub const TABLE_FILE: &str = "zero_shot.csv";
pub const SEEDS_FILE: &str = "zero_shot_seeds.csv";

/// Builds the table from pooled returns per difficulty; the first entry must
/// be the easy baseline.
pub fn table(hash: &str, variant: &str, pooled: &[(Difficulty, Vec<f64>)]) -> Result<Vec<ZeroShotRow>> {
    let Some((Difficulty::Easy, easy)) = pooled.first() else {
        return Err(HarnessError::Config("the zero-shot table starts from the easy baseline".into()));
    };
    let base = mean_std(easy).0;
    Ok(pooled
        .iter()
        .map(|(d, xs)| {
            let (m, s) = mean_std(xs);
            ZeroShotRow {
                config_hash: hash.to_string(),
                variant: variant.to_string(),
                difficulty: d.as_str().to_string(),
                mean: m,
                std: s,
                episodes: xs.len(),
                delta_pct: delta_pct(m, base),
            }
        })
        .collect())
}

pub fn eval_zero_shot(cfg: &ExperimentConfig) -> Result<Vec<ZeroShotRow>> {
    cfg.validate()?;
    if cfg.difficulty.parse::<Difficulty>()? != Difficulty::Easy || cfg.delay_pmf.is_some() || cfg.delay_mu.is_some() {
        return Err(HarnessError::Config("zero-shot evaluation needs agents trained under easy delays".into()));
    }
    let dir = cfg.out_dir();
    ensure_dir(&dir)?;
    let hash = cfg.hash();
    let variant = cfg.variant()?.as_str().to_string();
    let mut manifest = ManifestWriter::new(&dir, "zero_shot_manifest.json", "eval-zero-shot", cfg);
    let mut pooled: Vec<(Difficulty, Vec<f64>)> = Difficulty::DELAYED.iter().map(|&d| (d, Vec::new())).collect();
    let mut per_seed = Vec::new();
    for &seed in &cfg.seeds {
        for (d, acc) in pooled.iter_mut() {
            let mut train = cfg.train_config(seed)?;
            train.delay = cfg.delay_for(*d)?;
            let res = load_checkpoint(&checkpoint_path(&dir, seed), &hash, seed, train)
                .and_then(|mut t| Ok(t.final_evaluation(cfg.final_eval_episodes)?));
            let (m, s, xs) = match res {
                Ok(v) => v,
                Err(e) => {
                    manifest.failed(format!("{d} seed {seed}"), Some(seed), &e);
                    return Err(e);
                }
            };
            if !xs.iter().all(|v| v.is_finite()) {
                return Err(HarnessError::Divergence("zero-shot reward is not finite".into()));
            }
            acc.extend(xs);
            per_seed.push(ZeroShotSeedRow {
                config_hash: hash.clone(),
                seed,
                difficulty: d.as_str().to_string(),
                mean: m,
                std: s,
            });
        }
    }
    let rows = table(&hash, &variant, &pooled)?;
    write_csv(&dir.join(TABLE_FILE), &rows)?;
    write_csv(&dir.join(SEEDS_FILE), &per_seed)?;
    manifest.ok("table", None, vec![TABLE_FILE.into(), SEEDS_FILE.into()])?;
    manifest.finish()?;
    Ok(rows)
}
