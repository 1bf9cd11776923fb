//! `eval-gap`: critic-tempered policy gap of trained agents, per receiver and
//! sender, under one or more delay settings.

use std::path::Path;

use cdcma_core::channel::Difficulty;
use cdcma_core::rng::{derive_key, Stream};
use cdcma_core::training::{gap_entries, GapEntry, GapMatrix};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::output::{ensure_dir, file_name, write_csv, ManifestWriter};
use crate::run::{checkpoint_path, load_checkpoint};

/// Keeps gap episodes apart from every other evaluation stream.
const GAP_TAG: u64 = 0x6761_70;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapLogRow {
    pub config_hash: String,
    pub seed: u64,
    pub difficulty: String,
    pub run: usize,
    pub step: usize,
    pub receiver: usize,
    pub sender: usize,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapCell {
    pub config_hash: String,
    pub seed: u64,
    pub variant: String,
    pub difficulty: String,
    pub receiver: usize,
    pub sender: usize,
    pub mean_gap: f64,
    pub count: usize,
}

/// Receiver × sender averages from a log, in row-major cell order.
pub fn matrix_rows(hash: &str, seed: u64, variant: &str, difficulty: &str, n: usize, log: &[GapLogRow]) -> Vec<GapCell> {
    let entries: Vec<GapEntry> = log
        .iter()
        .map(|r| GapEntry {
            step: r.step,
            receiver: r.receiver,
            sender: r.sender,
            gap: r.gap,
        })
        .collect();
    let m = GapMatrix::from_entries(&entries, n);
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            out.push(GapCell {
                config_hash: hash.to_string(),
                seed,
                variant: variant.to_string(),
                difficulty: difficulty.to_string(),
                receiver: i,
                sender: j,
                mean_gap: m.mean[i][j],
                count: m.count[i][j],
            });
        }
    }
    out
}

pub fn gap_seeds(seed: u64, runs: usize) -> Vec<u64> {
    (0..runs as u64).map(|k| derive_key(seed, Stream::Eval, &[GAP_TAG, k])).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapResult {
    pub seed: u64,
    pub difficulty: Difficulty,
    pub cells: Vec<GapCell>,
    pub log: Vec<GapLogRow>,
}

impl GapResult {
    pub fn max_gap(&self) -> f64 {
        self.cells.iter().fold(0.0, |a, c| a.max(c.mean_gap))
    }
}

/// Greedy rollouts of a trained checkpoint under `difficulty`; actions come
/// from the delayed branch only, and the reference message enters just the
/// gap computation.
pub fn eval_seed(cfg: &ExperimentConfig, seed: u64, difficulty: Difficulty) -> Result<GapResult> {
    let hash = cfg.hash();
    let mut train = cfg.train_config(seed)?;
    train.delay = cfg.delay_for(difficulty)?;
    let path = checkpoint_path(&cfg.out_dir(), seed);
    if !path.exists() {
        return Err(HarnessError::Io(format!("missing checkpoint {}", path.display())));
    }
    let mut trainer = load_checkpoint(&path, &hash, seed, train)?;
    let layout = trainer.config.gain_layout();
    let traces = trainer.evaluate_seeds(&gap_seeds(seed, cfg.gap_runs))?;
    let mut log = Vec::new();
    for (run, t) in traces.iter().enumerate() {
        for e in gap_entries(&trainer.gain, &layout, &t.records, cfg.eta)? {
            if !e.gap.is_finite() {
                return Err(HarnessError::Divergence("policy gap is not finite".into()));
            }
            log.push(GapLogRow {
                config_hash: hash.clone(),
                seed,
                difficulty: difficulty.as_str().to_string(),
                run,
                step: e.step,
                receiver: e.receiver,
                sender: e.sender,
                gap: e.gap,
            });
        }
    }
    let variant = cfg.variant()?.as_str().to_string();
    let cells = matrix_rows(&hash, seed, &variant, difficulty.as_str(), layout.n_agents, &log);
    Ok(GapResult {
        seed,
        difficulty,
        cells,
        log,
    })
}

pub fn matrix_path(dir: &Path, variant: &str, difficulty: Difficulty, seed: u64) -> std::path::PathBuf {
    dir.join(format!("gap_{variant}_{difficulty}_seed{seed}.csv"))
}

pub fn log_path(dir: &Path, variant: &str, difficulty: Difficulty, seed: u64) -> std::path::PathBuf {
    dir.join(format!("gaplog_{variant}_{difficulty}_seed{seed}.csv"))
}

/// Evaluates every seed's checkpoint under each difficulty (the training
/// delay model when `difficulties` is empty) and writes matrix and log CSVs.
pub fn eval_gap(cfg: &ExperimentConfig, difficulties: &[Difficulty]) -> Result<Vec<GapResult>> {
    cfg.validate()?;
    let dir = cfg.out_dir();
    ensure_dir(&dir)?;
    let diffs: Vec<Difficulty> = if difficulties.is_empty() {
        vec![cfg.difficulty.parse()?]
    } else {
        difficulties.to_vec()
    };
    let variant = cfg.variant()?.as_str();
    let mut manifest = ManifestWriter::new(&dir, "gap_manifest.json", "eval-gap", cfg);
    let mut out = Vec::new();
    for &seed in &cfg.seeds {
        for &d in &diffs {
            let label = format!("{variant} {d} seed {seed}");
            let res = eval_seed(cfg, seed, d).and_then(|r| {
                let (m, l) = (matrix_path(&dir, variant, d, seed), log_path(&dir, variant, d, seed));
                write_csv(&m, &r.cells)?;
                write_csv(&l, &r.log)?;
                Ok((r, vec![file_name(&m), file_name(&l)]))
            });
            match res {
                Ok((r, files)) => {
                    manifest.ok(label, Some(seed), files)?;
                    out.push(r);
                }
                Err(e) => {
                    manifest.failed(label, Some(seed), &e);
                    return Err(e);
                }
            }
        }
    }
    manifest.finish()?;
    Ok(out)
}
