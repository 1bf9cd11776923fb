//! Command-line front end. Precedence: built-in defaults, then `--config`,
//! then individual flags.

use std::ffi::OsString;
use std::path::PathBuf;

use cdcma_core::channel::Difficulty;
use clap::{Args, Parser, Subcommand};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::gap::eval_gap;
use crate::run::run;
use crate::sweep::{sweep, Axis};
use crate::zero_shot::eval_zero_shot;

#[derive(Debug, Parser)]
#[command(name = "cdcma", about = "Delay-aware multi-agent communication experiments", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train and evaluate every configured seed.
    Run(Common),
    /// One run per point of a horizon, λ or ablation grid.
    Sweep {
        #[arg(long, value_parser = parse_axis)]
        axis: Axis,
        #[command(flatten)]
        common: Common,
    },
    /// Policy-gap matrices of trained checkpoints.
    EvalGap {
        /// Delay settings to evaluate under; defaults to the training one.
        #[arg(long, value_delimiter = ',', value_parser = parse_difficulty)]
        at: Vec<Difficulty>,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate easy-trained checkpoints under every difficulty.
    EvalZeroShot(Common),
}

#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// Flat TOML config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long)]
    pub n_agents: Option<usize>,
    #[arg(long)]
    pub difficulty: Option<String>,
    #[arg(long)]
    pub dmax: Option<usize>,
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Fixed λ, or the λ₀ multiplier together with `--lambda0-auto`.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Calibrate λ₀ from training batches.
    #[arg(long)]
    pub lambda0_auto: bool,
    /// Repeatable or comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub seed: Vec<u64>,
    #[arg(long)]
    pub episodes: Option<u64>,
    /// One of dcos, otg, cama, plainattn, nocomm (or full).
    #[arg(long)]
    pub ablate: Option<String>,
    #[arg(long)]
    pub delay_free: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_axis(s: &str) -> std::result::Result<Axis, String> {
    s.parse().map_err(|e: HarnessError| e.to_string())
}

fn parse_difficulty(s: &str) -> std::result::Result<Difficulty, String> {
    s.parse().map_err(|e: cdcma_core::CoreError| e.to_string())
}

impl Common {
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = &self.task {
            c.task = v.clone();
        }
        if let Some(v) = self.n_agents {
            c.n_agents = v;
        }
        if let Some(v) = &self.difficulty {
            c.difficulty = v.clone();
            c.delay_mu = None;
            c.delay_sigma = None;
            c.delay_pmf = None;
        }
        if self.delay_free {
            c.difficulty = "none".into();
            c.delay_mu = None;
            c.delay_sigma = None;
            c.delay_pmf = None;
        }
        if let Some(v) = self.dmax {
            c.d_max = v;
        }
        if let Some(v) = self.horizon {
            c.horizon = v;
        }
        if self.lambda0_auto {
            c.lambda_mode = "calibrated".into();
        } else if self.lambda.is_some() {
            c.lambda_mode = "fixed".into();
        }
        if let Some(v) = self.lambda {
            c.lambda = v;
        }
        if !self.seed.is_empty() {
            c.seeds = self.seed.clone();
        }
        if let Some(v) = self.episodes {
            c.episodes = v;
        }
        if let Some(v) = &self.ablate {
            c.ablation = v.clone();
        }
        if let Some(v) = &self.out {
            c.out = v.to_string_lossy().into_owned();
        }
        c.validate()?;
        Ok(c)
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Run(common) => {
            let agg = run(&common.resolve()?)?;
            println!(
                "{}: final reward {:.4} ± {:.4} over seeds {:?} (random {:.4})",
                agg.variant, agg.mean_of_finals, agg.std_of_finals, agg.seeds, agg.random.mean
            );
        }
        Command::Sweep { axis, common } => {
            for r in sweep(&common.resolve()?, *axis)? {
                println!("{}={}: {:?} ± {:?}", r.axis, r.value, r.mean_of_finals, r.std_of_finals);
            }
        }
        Command::EvalGap { at, common } => {
            for r in eval_gap(&common.resolve()?, at)? {
                println!("seed {} {}: max mean gap {:.6}", r.seed, r.difficulty, r.max_gap());
            }
        }
        Command::EvalZeroShot(common) => {
            for r in eval_zero_shot(&common.resolve()?)? {
                println!("{}: {:.4} ± {:.4} (Δ% {:.2})", r.difficulty, r.mean, r.std, r.delta_pct);
            }
        }
    }
    Ok(())
}

/// Parses arguments, runs the command and returns the process exit code.
/// Usage errors count as configuration errors.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
