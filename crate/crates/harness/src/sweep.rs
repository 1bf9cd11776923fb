//! `sweep`: one full run per grid point along a single axis.

use std::fmt;
use std::str::FromStr;

use cdcma_core::agent::Variant;
use cdcma_core::cgdc::{horizon_grid, lambda_grid};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::output::{ensure_dir, write_csv, ManifestWriter};
use crate::run::run;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Horizon,
    Lambda,
    Ablation,
}

impl Axis {
    pub fn as_str(self) -> &'static str {
        match self {
            Axis::Horizon => "horizon",
            Axis::Lambda => "lambda",
            Axis::Ablation => "ablation",
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Axis {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "h" | "horizon" => Ok(Axis::Horizon),
            "lambda" | "l" => Ok(Axis::Lambda),
            "ablation" | "ablate" => Ok(Axis::Ablation),
            other => Err(HarnessError::Config(format!("unknown sweep axis {other:?}"))),
        }
    }
}

/// Label and configuration of every grid point. λ points keep the
/// template's mode: absolute values when fixed, multipliers of the
/// calibrated λ₀ otherwise.
pub fn grid(template: &ExperimentConfig, axis: Axis) -> Vec<(String, ExperimentConfig)> {
    let base = template.out_dir();
    let point = |label: String, edit: &dyn Fn(&mut ExperimentConfig)| {
        let mut c = template.clone();
        edit(&mut c);
        c.out = base.join(format!("{}_{label}", axis.as_str())).to_string_lossy().into_owned();
        (label, c)
    };
    match axis {
        Axis::Horizon => horizon_grid(template.d_max)
            .iter()
            .map(|&h| point(h.to_string(), &|c| c.horizon = h))
            .collect(),
        Axis::Lambda => lambda_grid(template.lambda)
            .iter()
            .map(|&l| point(format!("{l}"), &|c| c.lambda = l))
            .collect(),
        Axis::Ablation => Variant::ABLATIONS
            .iter()
            .map(|v| point(v.as_str().to_string(), &|c| c.ablation = v.as_str().to_string()))
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: String,
    pub config_hash: String,
    pub status: String,
    pub mean_of_finals: Option<f64>,
    pub std_of_finals: Option<f64>,
    pub pooled_mean: Option<f64>,
    pub pooled_se: Option<f64>,
    pub error: Option<String>,
}

pub const SWEEP_FILE: &str = "sweep.csv";

/// Runs every grid point. A failing point is recorded and the sweep moves
/// on; the error of the first failure is returned after the table is
/// written.
pub fn sweep(template: &ExperimentConfig, axis: Axis) -> Result<Vec<SweepRow>> {
    template.validate()?;
    let points = grid(template, axis);
    for (_, c) in &points {
        c.validate()?;
    }
    let dir = template.out_dir();
    ensure_dir(&dir)?;
    let mut manifest = ManifestWriter::new(&dir, "sweep_manifest.json", &format!("sweep {axis}"), template);
    let mut rows = Vec::new();
    let mut first_err = None;
    for (label, c) in points {
        let hash = c.hash();
        match run(&c) {
            Ok(agg) => {
                manifest.ok(format!("{axis}={label}"), None, vec![c.out.clone()])?;
                rows.push(SweepRow {
                    axis: axis.to_string(),
                    value: label,
                    config_hash: hash,
                    status: "ok".into(),
                    mean_of_finals: Some(agg.mean_of_finals),
                    std_of_finals: Some(agg.std_of_finals),
                    pooled_mean: Some(agg.pooled.mean),
                    pooled_se: Some(agg.pooled.se),
                    error: None,
                });
            }
            Err(e) => {
                manifest.failed(format!("{axis}={label}"), None, &e);
                rows.push(SweepRow {
                    axis: axis.to_string(),
                    value: label,
                    config_hash: hash,
                    status: "failed".into(),
                    mean_of_finals: None,
                    std_of_finals: None,
                    pooled_mean: None,
                    pooled_se: None,
                    error: Some(e.to_string()),
                });
                first_err.get_or_insert(e);
            }
        }
    }
    write_csv(&dir.join(SWEEP_FILE), &rows)?;
    manifest.finish()?;
    match first_err {
        Some(e) => Err(e),
        None => Ok(rows),
    }
}
