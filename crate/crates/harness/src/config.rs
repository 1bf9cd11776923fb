//! Flat experiment configuration, its validation and its content hash.

use std::path::{Path, PathBuf};

use cdcma_core::agent::{AgentConfig, Variant};
use cdcma_core::channel::{DelaySpec, Difficulty};
use cdcma_core::env::{Task, TaskConfig};
use cdcma_core::training::{LambdaMode, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

/// Everything a run needs. Serialized as flat TOML; every field has a
/// default, so a config file only lists what it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// `cn` or `pp`.
    pub task: String,
    pub n_agents: usize,
    /// `easy`, `medium`, `hard`, `super_hard`, or `none` for delay-free.
    pub difficulty: String,
    /// Explicit normal delay model; overrides `difficulty` when both are set.
    pub delay_mu: Option<f64>,
    pub delay_sigma: Option<f64>,
    /// Explicit categorical PMF over delays `1..=d_max`; overrides the rest.
    pub delay_pmf: Option<Vec<f64>>,
    pub d_max: usize,
    pub horizon: usize,
    /// `fixed` (λ = `lambda`) or `calibrated` (λ = `lambda` · λ₀).
    pub lambda_mode: String,
    pub lambda: f64,
    pub eta: f64,
    /// Attention inverse temperature; defaults to 1/√key_dim.
    pub beta: Option<f64>,
    pub embed_dim: usize,
    pub hidden: usize,
    pub key_dim: usize,
    pub critic_hidden: usize,
    pub gamma: f64,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub replay_capacity: usize,
    pub batch_size: usize,
    pub episodes: u64,
    pub warmup_episodes: u64,
    pub updates_per_episode: usize,
    pub target_sync: u64,
    pub calibrate_every: u64,
    pub request_epsilon: f64,
    pub entropy: f64,
    pub eval_every: u64,
    pub eval_episodes: usize,
    pub final_eval_episodes: usize,
    /// Evaluation episodes behind each policy-gap matrix.
    pub gap_runs: usize,
    pub seeds: Vec<u64>,
    /// `full` or one of the ablation flags `dcos`, `otg`, `cama`,
    /// `plainattn`, `nocomm`.
    pub ablation: String,
    /// Output directory. Not part of the config hash.
    pub out: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            task: "cn".into(),
            n_agents: 3,
            difficulty: "easy".into(),
            delay_mu: None,
            delay_sigma: None,
            delay_pmf: None,
            d_max: 5,
            horizon: 3,
            lambda_mode: "calibrated".into(),
            lambda: 1.0,
            eta: 1.0,
            beta: None,
            embed_dim: 64,
            hidden: 64,
            key_dim: 32,
            critic_hidden: 128,
            gamma: 0.96,
            lr_actor: 1e-3,
            lr_critic: 1e-2,
            replay_capacity: 5000,
            batch_size: 32,
            episodes: 5000,
            warmup_episodes: 100,
            updates_per_episode: 1,
            target_sync: 200,
            calibrate_every: 1000,
            request_epsilon: 0.1,
            entropy: 0.01,
            eval_every: 250,
            eval_episodes: 16,
            final_eval_episodes: 100,
            gap_runs: 10,
            seeds: vec![1, 2, 3, 4],
            ablation: "full".into(),
            out: "runs".into(),
        }
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.message().to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("flat config always serializes")
    }

    pub fn task_kind(&self) -> Result<Task> {
        Ok(self.task.parse()?)
    }

    pub fn variant(&self) -> Result<Variant> {
        Ok(self.ablation.parse()?)
    }

    pub fn lambda_mode(&self) -> Result<LambdaMode> {
        match self.lambda_mode.trim().to_ascii_lowercase().as_str() {
            "fixed" => Ok(LambdaMode::Fixed(self.lambda)),
            "calibrated" | "auto" => Ok(LambdaMode::Calibrated { multiplier: self.lambda }),
            other => Err(HarnessError::Config(format!("unknown lambda mode {other:?}"))),
        }
    }

    pub fn task_config(&self) -> Result<TaskConfig> {
        let t = match self.task_kind()? {
            Task::CooperativeNavigation => TaskConfig::cooperative_navigation(self.n_agents),
            Task::PredatorPrey => TaskConfig::predator_prey(self.n_agents),
        };
        t.validate()?;
        Ok(t)
    }

    /// The delay model selected by the most specific setting present.
    pub fn delay_spec(&self) -> Result<DelaySpec> {
        if let Some(pmf) = &self.delay_pmf {
            if pmf.len() != self.d_max {
                return Err(HarnessError::Config(format!(
                    "delay_pmf has {} entries but d_max is {}",
                    pmf.len(),
                    self.d_max
                )));
            }
            return Ok(DelaySpec::categorical(pmf)?);
        }
        match (self.delay_mu, self.delay_sigma) {
            (Some(mu), Some(sigma)) => return Ok(DelaySpec::normal(mu, sigma, self.d_max)?),
            (None, None) => {}
            _ => return Err(HarnessError::Config("delay_mu and delay_sigma must be given together".into())),
        }
        self.delay_for(self.difficulty.parse()?)
    }

    pub fn delay_for(&self, difficulty: Difficulty) -> Result<DelaySpec> {
        Ok(match difficulty {
            Difficulty::None => DelaySpec::delay_free(self.d_max)?,
            d => DelaySpec::from_difficulty(d, self.d_max)?,
        })
    }

    pub fn agent_config(&self) -> Result<AgentConfig> {
        let task = self.task_config()?;
        let mut a = AgentConfig::new(task.n_agents, task.obs_dim());
        a.embed_dim = self.embed_dim;
        a.hidden = self.hidden;
        a.key_dim = self.key_dim;
        a.beta = self.beta.unwrap_or(1.0 / (self.key_dim.max(1) as f64).sqrt());
        a.horizon = self.horizon;
        a.d_max = self.d_max;
        a.variant = self.variant()?;
        a.validate()?;
        Ok(a)
    }

    pub fn train_config(&self, seed: u64) -> Result<TrainConfig> {
        let mut c = TrainConfig::new(seed, self.task_config()?, self.agent_config()?, self.delay_spec()?);
        c.gamma = self.gamma;
        c.lr_actor = self.lr_actor;
        c.lr_critic = self.lr_critic;
        c.critic_hidden = self.critic_hidden;
        c.replay_capacity = self.replay_capacity;
        c.batch_size = self.batch_size;
        c.episodes = self.episodes;
        c.warmup_episodes = self.warmup_episodes;
        c.updates_per_episode = self.updates_per_episode;
        c.target_sync = self.target_sync;
        c.calibrate_every = self.calibrate_every;
        c.request_epsilon = self.request_epsilon;
        c.entropy = self.entropy;
        c.eta = self.eta;
        c.lambda = self.lambda_mode()?;
        c.eval_every = self.eval_every;
        c.eval_episodes = self.eval_episodes;
        c.validate()?;
        Ok(c)
    }

    /// Checks every referenced value without running anything.
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(HarnessError::Config("at least one seed is required".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(HarnessError::Config("seeds must be distinct".into()));
        }
        if self.episodes == 0 || self.final_eval_episodes == 0 || self.gap_runs == 0 {
            return Err(HarnessError::Config(
                "episodes, final_eval_episodes and gap_runs must be positive".into(),
            ));
        }
        if self.out.trim().is_empty() {
            return Err(HarnessError::Config("output directory must be set".into()));
        }
        self.train_config(self.seeds[0])?;
        Ok(())
    }

    /// SHA-256 over the canonical JSON form, with the output directory
    /// blanked so the same experiment hashes the same wherever it is written.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out.clear();
        let json = serde_json::to_vec(&c).expect("config always serializes");
        hex(&Sha256::digest(&json))
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(&self.out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn hash_ignores_output_directory_only() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.out = "elsewhere".into();
        assert_eq!(a.hash(), b.hash());
        b.seeds = vec![9];
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn toml_round_trip() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig::from_toml_str(&a.to_toml_string()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_toml_str("colour = 3").is_err());
        let c = ExperimentConfig::from_toml_str("difficulty = \"hard\"\nseeds = [7]").unwrap();
        assert_eq!(c.difficulty, "hard");
        assert_eq!(c.seeds, vec![7]);
        assert_eq!(c.d_max, 5);
    }
}
