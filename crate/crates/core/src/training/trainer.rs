//! The outer training loop: collect an episode, run gradient updates, sync
//! targets, recalibrate λ₀, evaluate.

use cdcma_nn::{sync_target, AdamConfig, AdamState, Archive, Activation, Mlp, SyncMode};

use crate::agent::{AgentConfig, AgentNets, Variant};
use crate::cgdc::{GainLayout, LambdaCalibrator, RunningMeans, DEFAULT_ETA};
use crate::channel::DelaySpec;
use crate::env::{MultiAgentEnv, ParticleEnv, TaskConfig};
use crate::error::{CoreError, Result};
use crate::rng::{derive_key, substream, Stream};

use super::episode::{run_episode, EpisodeTrace, RequestRule, RolloutSettings};
use super::gap::{gap_entries, mean_gap};
use super::losses::{self, PolicyGradient};
use super::record::{ReplayBuffer, TransitionRecord};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaMode {
    Fixed(f64),
    /// `λ = multiplier · λ₀` with λ₀ re-estimated from training batches.
    Calibrated { multiplier: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub task: TaskConfig,
    pub agent: AgentConfig,
    pub delay: DelaySpec,
    pub gamma: f64,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub critic_hidden: usize,
    pub replay_capacity: usize,
    pub batch_size: usize,
    pub episodes: u64,
    pub warmup_episodes: u64,
    pub updates_per_episode: usize,
    pub target_sync: u64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of the episode budget over which ε is annealed.
    pub epsilon_anneal: f64,
    pub request_epsilon: f64,
    pub eta: f64,
    pub lambda: LambdaMode,
    pub calibrate_every: u64,
    pub entropy: f64,
    pub policy_gradient: PolicyGradient,
    pub eval_every: u64,
    pub eval_episodes: usize,
}

impl TrainConfig {
    pub fn new(seed: u64, task: TaskConfig, agent: AgentConfig, delay: DelaySpec) -> Self {
        Self {
            seed,
            task,
            agent,
            delay,
            gamma: 0.96,
            lr_actor: 1e-3,
            lr_critic: 1e-2,
            critic_hidden: 128,
            replay_capacity: 5000,
            batch_size: 32,
            episodes: 5000,
            warmup_episodes: 100,
            updates_per_episode: 1,
            target_sync: 200,
            epsilon_start: 0.3,
            epsilon_end: 0.05,
            epsilon_anneal: 0.3,
            request_epsilon: 0.1,
            eta: DEFAULT_ETA,
            lambda: LambdaMode::Calibrated { multiplier: 1.0 },
            calibrate_every: 1000,
            entropy: 0.01,
            policy_gradient: PolicyGradient::Expected,
            eval_every: 250,
            eval_episodes: 16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.agent.validate()?;
        if self.agent.n_agents != self.task.n_agents || self.agent.obs_dim != self.task.obs_dim() {
            return Err(CoreError::config("agent dimensions do not match the task"));
        }
        if self.agent.d_max != self.delay.d_max() {
            return Err(CoreError::config("agent d_max does not match the delay model"));
        }
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(CoreError::config("gamma must lie in [0, 1)"));
        }
        if !(self.lr_actor >= 0.0 && self.lr_critic >= 0.0) || !self.lr_actor.is_finite() || !self.lr_critic.is_finite() {
            return Err(CoreError::config("learning rates must be finite and non-negative"));
        }
        if self.critic_hidden == 0 || self.replay_capacity == 0 || self.batch_size == 0 {
            return Err(CoreError::config("critic width, replay capacity and batch size must be positive"));
        }
        if self.target_sync == 0 || self.calibrate_every == 0 || self.eval_every == 0 || self.eval_episodes == 0 {
            return Err(CoreError::config("cadences and evaluation size must be positive"));
        }
        if !unit(self.epsilon_start) || !unit(self.epsilon_end) || !unit(self.epsilon_anneal) || !unit(self.request_epsilon) {
            return Err(CoreError::config("exploration rates must lie in [0, 1]"));
        }
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(CoreError::config("eta must be positive"));
        }
        match self.lambda {
            LambdaMode::Fixed(v) | LambdaMode::Calibrated { multiplier: v } if !(v >= 0.0) || !v.is_finite() => {
                Err(CoreError::config("lambda must be finite and non-negative"))
            }
            _ => Ok(()),
        }?;
        if !(self.entropy >= 0.0) {
            return Err(CoreError::config("entropy coefficient must be non-negative"));
        }
        Ok(())
    }

    pub fn gain_layout(&self) -> GainLayout {
        GainLayout {
            n_agents: self.agent.n_agents,
            obs_dim: self.agent.obs_dim,
            msg_dim: self.agent.msg_dim(),
        }
    }

    pub fn epsilon_at(&self, episode: u64) -> f64 {
        let span = self.epsilon_anneal * self.episodes as f64;
        let frac = if span <= 0.0 { 1.0 } else { (episode as f64 / span).min(1.0) };
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }

    fn requests(&self) -> RequestRule {
        RequestRule::for_variant(self.agent.variant)
    }
}

/// Loss and scoring averages accumulated between evaluation points.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossStats {
    pub updates: u64,
    pub full_critic: f64,
    pub gain_critic: f64,
    pub actor: f64,
    pub residual: f64,
    pub action_pred: f64,
    pub dcos: f64,
    pub pairs: u64,
    pub mean_gain: f64,
    pub mean_cost: f64,
}

impl LossStats {
    fn add(&mut self, l: &UpdateReport) {
        self.updates += 1;
        let k = self.updates as f64;
        let upd = |acc: &mut f64, v: f64| *acc += (v - *acc) / k;
        upd(&mut self.full_critic, l.full_critic);
        upd(&mut self.gain_critic, l.gain_critic);
        upd(&mut self.actor, l.actor);
        upd(&mut self.residual, l.residual);
        upd(&mut self.action_pred, l.action_pred);
        upd(&mut self.dcos, l.dcos);
        if l.pairs > 0 {
            let total = self.pairs + l.pairs;
            let w = l.pairs as f64 / total as f64;
            self.mean_gain += w * (l.mean_gain - self.mean_gain);
            self.mean_cost += w * (l.mean_cost - self.mean_cost);
            self.pairs = total;
        }
    }

    fn to_vec(self) -> Vec<f64> {
        vec![
            self.updates as f64,
            self.full_critic,
            self.gain_critic,
            self.actor,
            self.residual,
            self.action_pred,
            self.dcos,
            self.pairs as f64,
            self.mean_gain,
            self.mean_cost,
        ]
    }

    fn from_slice(v: &[f64]) -> Self {
        Self {
            updates: v[0] as u64,
            full_critic: v[1],
            gain_critic: v[2],
            actor: v[3],
            residual: v[4],
            action_pred: v[5],
            dcos: v[6],
            pairs: v[7] as u64,
            mean_gain: v[8],
            mean_cost: v[9],
        }
    }
}

/// Values from one gradient update.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UpdateReport {
    pub full_critic: f64,
    pub gain_critic: f64,
    pub actor: f64,
    pub residual: f64,
    pub action_pred: f64,
    pub dcos: f64,
    pub pairs: u64,
    pub mean_gain: f64,
    pub mean_cost: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalPoint {
    pub episode: u64,
    pub mean_reward: f64,
    pub std_reward: f64,
    pub losses: LossStats,
    pub lambda: f64,
    pub request_rate: f64,
    pub policy_gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Optimizers {
    pub encoder: AdamState,
    pub cama: AdamState,
    pub actor: AdamState,
    pub action_pred: AdamState,
    pub residual: AdamState,
    pub dcos: AdamState,
    pub full: AdamState,
    pub gain: AdamState,
}

const OPT_NAMES: [&str; 8] = ["encoder", "cama", "actor", "action_pred", "residual", "dcos", "full", "gain"];

impl Optimizers {
    fn new(nets: &AgentNets, full: &Mlp, gain: &Mlp, lr_actor: f64, lr_critic: f64) -> Self {
        let a = AdamConfig::with_lr(lr_actor);
        let c = AdamConfig::with_lr(lr_critic);
        Self {
            encoder: AdamState::new(&nets.encoder, a),
            cama: AdamState::new(&nets.cama, a),
            actor: AdamState::new(&nets.actor, a),
            action_pred: AdamState::new(&nets.action_pred, a),
            residual: AdamState::new(&nets.residual, a),
            dcos: AdamState::new(&nets.dcos, a),
            full: AdamState::new(full, c),
            gain: AdamState::new(gain, c),
        }
    }

    fn all(&self) -> [&AdamState; 8] {
        [
            &self.encoder,
            &self.cama,
            &self.actor,
            &self.action_pred,
            &self.residual,
            &self.dcos,
            &self.full,
            &self.gain,
        ]
    }

    fn all_mut(&mut self) -> [&mut AdamState; 8] {
        [
            &mut self.encoder,
            &mut self.cama,
            &mut self.actor,
            &mut self.action_pred,
            &mut self.residual,
            &mut self.dcos,
            &mut self.full,
            &mut self.gain,
        ]
    }
}

pub fn critic_mlp<R: rand::Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Result<Mlp> {
    Ok(Mlp::random(&[input, hidden, hidden, 1], Activation::Relu, Activation::Identity, rng)?)
}

pub struct Trainer {
    pub config: TrainConfig,
    env: Box<dyn MultiAgentEnv + Send>,
    pub nets: AgentNets,
    pub target: AgentNets,
    pub full: Mlp,
    pub full_target: Mlp,
    pub gain: Mlp,
    pub gain_target: Mlp,
    pub opt: Optimizers,
    pub replay: ReplayBuffer,
    pub calibrator: LambdaCalibrator,
    pub calib_means: RunningMeans,
    stats: LossStats,
    episode: u64,
    updates: u64,
    eval_points: u64,
    last_update: Option<UpdateReport>,
}

fn sync_nets(online: &AgentNets, target: &mut AgentNets) -> Result<()> {
    sync_target(&online.encoder, &mut target.encoder, SyncMode::Hard)?;
    sync_target(&online.actor, &mut target.actor, SyncMode::Hard)?;
    target.cama = online.cama.clone();
    Ok(())
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let env = ParticleEnv::new(config.task.clone())?;
        Self::with_env(config, Box::new(env))
    }

    /// Trains on any environment with matching dimensions.
    pub fn with_env(config: TrainConfig, env: Box<dyn MultiAgentEnv + Send>) -> Result<Self> {
        config.agent.validate()?;
        if env.n_agents() != config.agent.n_agents || env.obs_dim() != config.agent.obs_dim {
            return Err(CoreError::config("environment does not match the agent dimensions"));
        }
        let mut rng = substream(config.seed, Stream::Init, &[]);
        let nets = AgentNets::new(config.agent.clone(), &mut rng)?;
        let a = &config.agent;
        let full = critic_mlp(
            losses::full_input_dim(a.n_agents, a.obs_dim, a.msg_dim()),
            config.critic_hidden,
            &mut rng,
        )?;
        let gain = critic_mlp(config.gain_layout().input_dim(), config.critic_hidden, &mut rng)?;
        let opt = Optimizers::new(&nets, &full, &gain, config.lr_actor, config.lr_critic);
        Ok(Self {
            replay: ReplayBuffer::new(config.replay_capacity)?,
            target: nets.clone(),
            full_target: full.clone(),
            gain_target: gain.clone(),
            nets,
            full,
            gain,
            opt,
            calibrator: LambdaCalibrator::default(),
            calib_means: RunningMeans::default(),
            stats: LossStats::default(),
            episode: 0,
            updates: 0,
            eval_points: 0,
            last_update: None,
            config,
            env,
        })
    }

    pub fn episode(&self) -> u64 {
        self.episode
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn last_update(&self) -> Option<UpdateReport> {
        self.last_update
    }

    pub fn lambda(&self) -> f64 {
        match self.config.lambda {
            LambdaMode::Fixed(v) => v,
            LambdaMode::Calibrated { multiplier } => multiplier * self.calibrator.lambda0,
        }
    }

    pub fn episode_seed(&self, episode: u64) -> u64 {
        derive_key(self.config.seed, Stream::Episode, &[episode])
    }

    /// Collects one training episode into replay and returns its trace.
    pub fn collect(&mut self) -> Result<EpisodeTrace> {
        let settings = RolloutSettings {
            greedy: false,
            action_epsilon: self.config.epsilon_at(self.episode),
            request_epsilon: self.config.request_epsilon,
            requests: self.config.requests(),
        };
        let seed = self.episode_seed(self.episode);
        let trace = run_episode(self.env.as_mut(), &self.nets, &self.config.delay, &settings, seed)?;
        for r in &trace.records {
            self.replay.push(r.clone());
        }
        self.episode += 1;
        Ok(trace)
    }

    /// One update of every loss on a fresh batch.
    pub fn update(&mut self) -> Result<UpdateReport> {
        let mut rng = substream(self.config.seed, Stream::Update, &[self.updates]);
        let batch = self.replay.sample(self.config.batch_size, &mut rng)?;
        let gamma = self.config.gamma;
        let layout = self.config.gain_layout();
        let mut report = UpdateReport {
            lambda: self.lambda(),
            ..UpdateReport::default()
        };

        let next = batch
            .iter()
            .map(|r| losses::next_actions(&self.target, r, &mut rng))
            .collect::<Result<Vec<_>>>()?;

        let x = losses::full_critic_inputs(&self.nets, &batch)?;
        let y = losses::full_critic_targets(&self.target, &self.full_target, &batch, &next, gamma)?;
        let (l, g) = losses::full_critic_loss(&self.full, &x, &y)?;
        self.opt.full.step(&mut self.full, &g)?;
        report.full_critic = l;

        let x = losses::gain_critic_inputs(&layout, &batch)?;
        let y = losses::gain_critic_targets(&self.gain_target, &layout, &batch, &next, gamma)?;
        let (l, g) = losses::gain_critic_loss(&self.gain, &x, &y, batch.len())?;
        self.opt.gain.step(&mut self.gain, &g)?;
        report.gain_critic = l;

        let targets = losses::build_cgdc_targets(&self.gain, &layout, &batch, report.lambda, self.config.eta)?;
        let mut means = RunningMeans::default();
        for t in targets.iter().flatten().flatten() {
            means.push(t.gain, t.cost);
            self.calib_means.push(t.gain, t.cost);
        }
        report.pairs = means.count;
        report.mean_gain = means.mean_gain;
        report.mean_cost = means.mean_cost;
        if self.config.requests() == RequestRule::Gate {
            let x = losses::dcos_inputs(&self.nets, &batch)?;
            let (l, g) = losses::dcos_loss(&self.nets.dcos, &x, &targets)?;
            self.opt.dcos.step(&mut self.nets.dcos, &g)?;
            report.dcos = l;
        }

        if self.nets.config.effective_horizon() > 0 {
            let (x, y) = losses::residual_batch(&self.nets, &batch)?;
            let (l, g) = losses::residual_loss(&self.nets.residual, &x, &y)?;
            self.opt.residual.step(&mut self.nets.residual, &g)?;
            report.residual = l;
            let (x, labels) = losses::action_pred_batch(&self.nets, &batch)?;
            let per = batch.len() * self.nets.config.n_agents;
            let (l, g) = losses::action_pred_loss(&self.nets.action_pred, x.as_ref(), &labels, per)?;
            self.opt.action_pred.step(&mut self.nets.action_pred, &g)?;
            report.action_pred = l;
        }

        let q = losses::actor_action_values(&self.nets, &self.full, &batch)?;
        let (l, g) = losses::actor_loss(&self.nets, &batch, &q, self.config.policy_gradient, self.config.entropy)?;
        self.opt.actor.step(&mut self.nets.actor, &g.actor)?;
        self.opt.encoder.step(&mut self.nets.encoder, &g.encoder)?;
        self.opt.cama.step(&mut self.nets.cama, &g.cama)?;
        report.actor = l;

        self.updates += 1;
        if self.updates % self.config.target_sync == 0 {
            sync_nets(&self.nets, &mut self.target)?;
            sync_target(&self.full, &mut self.full_target, SyncMode::Hard)?;
            sync_target(&self.gain, &mut self.gain_target, SyncMode::Hard)?;
        }
        if matches!(self.config.lambda, LambdaMode::Calibrated { .. })
            && self.updates % self.config.calibrate_every == 0
            && self.calib_means.count > 0
        {
            self.calibrator.update(&self.calib_means)?;
            self.calib_means = RunningMeans::default();
        }
        self.stats.add(&report);
        self.last_update = Some(report);
        Ok(report)
    }

    /// Greedy rollouts on the given episode seeds; parameters are untouched.
    pub fn evaluate_seeds(&mut self, seeds: &[u64]) -> Result<Vec<EpisodeTrace>> {
        let settings = RolloutSettings::evaluation(self.config.agent.variant);
        seeds
            .iter()
            .map(|&s| run_episode(self.env.as_mut(), &self.nets, &self.config.delay, &settings, s))
            .collect()
    }

    /// Episode seeds of the `k`-th periodic evaluation.
    pub fn eval_seeds(&self, point: u64) -> Vec<u64> {
        (0..self.config.eval_episodes as u64)
            .map(|k| derive_key(self.config.seed, Stream::Eval, &[point, k]))
            .collect()
    }

    /// Seeds of the final evaluation. They depend only on the run seed, so
    /// every variant trained with the same seed is scored on the same
    /// episodes.
    pub fn final_eval_seeds(seed: u64, episodes: usize) -> Vec<u64> {
        (0..episodes as u64)
            .map(|k| derive_key(seed, Stream::FinalEval, &[k]))
            .collect()
    }

    fn eval_point(&mut self) -> Result<EvalPoint> {
        let seeds = self.eval_seeds(self.eval_points);
        self.eval_points += 1;
        let traces = self.evaluate_seeds(&seeds)?;
        let rewards: Vec<f64> = traces.iter().map(|t| t.total_reward()).collect();
        let (mean, std) = mean_std(&rewards);
        let layout = self.config.gain_layout();
        let mut entries = Vec::new();
        for t in &traces {
            entries.extend(gap_entries(&self.gain, &layout, &t.records, self.config.eta)?);
        }
        let slots: usize = traces.iter().map(|t| t.request_slots).sum();
        let reqs: usize = traces.iter().map(|t| t.requests).sum();
        let point = EvalPoint {
            episode: self.episode,
            mean_reward: mean,
            std_reward: std,
            losses: self.stats,
            lambda: self.lambda(),
            request_rate: if slots == 0 { 0.0 } else { reqs as f64 / slots as f64 },
            policy_gap: mean_gap(&entries),
        };
        self.stats = LossStats::default();
        Ok(point)
    }

    /// Trains until `until` episodes have been collected (capped at the
    /// configured budget), reporting every evaluation point.
    pub fn run_until<F: FnMut(&EvalPoint)>(&mut self, until: u64, mut on_eval: F) -> Result<()> {
        let until = until.min(self.config.episodes);
        while self.episode < until {
            self.collect()?;
            if self.episode > self.config.warmup_episodes {
                for _ in 0..self.config.updates_per_episode {
                    self.update()?;
                }
            }
            if self.episode % self.config.eval_every == 0 || self.episode == self.config.episodes {
                let p = self.eval_point()?;
                on_eval(&p);
            }
        }
        Ok(())
    }

    pub fn train<F: FnMut(&EvalPoint)>(&mut self, on_eval: F) -> Result<()> {
        self.run_until(self.config.episodes, on_eval)
    }

    /// Mean and std of greedy returns over the shared final-evaluation seeds.
    pub fn final_evaluation(&mut self, episodes: usize) -> Result<(f64, f64, Vec<f64>)> {
        let seeds = Self::final_eval_seeds(self.config.seed, episodes);
        let rewards: Vec<f64> = self.evaluate_seeds(&seeds)?.iter().map(|t| t.total_reward()).collect();
        let (m, s) = mean_std(&rewards);
        Ok((m, s, rewards))
    }

    /// Serializes networks, optimizer states, counters and accumulators, and
    /// optionally the replay buffer. Random streams are keyed by the counters,
    /// so no generator state needs saving; with the replay included a
    /// restored trainer continues bit for bit.
    pub fn checkpoint(&self, include_replay: bool) -> Archive {
        let mut a = Archive::new();
        let c = &self.config.agent;
        a.insert_u64("meta.n_agents", c.n_agents as u64);
        a.insert_u64("meta.obs_dim", c.obs_dim as u64);
        a.insert_u64("meta.embed_dim", c.embed_dim as u64);
        a.insert_u64("meta.critic_hidden", self.config.critic_hidden as u64);
        a.insert_text("meta.variant", self.config.agent.variant.as_str());
        self.nets.save(&mut a, "online");
        self.target.save(&mut a, "target");
        a.insert_mlp("full", &self.full);
        a.insert_mlp("full_target", &self.full_target);
        a.insert_mlp("gain", &self.gain);
        a.insert_mlp("gain_target", &self.gain_target);
        for (name, st) in OPT_NAMES.iter().zip(self.opt.all()) {
            a.insert_adam(&format!("opt.{name}"), st);
        }
        a.insert_u64("state.episode", self.episode);
        a.insert_u64("state.updates", self.updates);
        a.insert_u64("state.eval_points", self.eval_points);
        a.insert_vec(
            "state.calibrator",
            &[self.calibrator.lambda0, self.calibrator.smoothing, self.calibrator.rounds as f64],
        );
        a.insert_vec(
            "state.calib_means",
            &[self.calib_means.count as f64, self.calib_means.mean_gain, self.calib_means.mean_cost],
        );
        a.insert_vec("state.stats", &self.stats.to_vec());
        if include_replay {
            let mut flat = Vec::new();
            for r in self.replay.iter() {
                r.write_flat(&mut flat);
            }
            a.insert_u64("replay.len", self.replay.len() as u64);
            a.insert_u64("replay.pushed", self.replay.pushed());
            a.insert_vec("replay.data", &flat);
        }
        a
    }

    /// Rebuilds a trainer from `config` and a checkpoint. Without a stored
    /// replay buffer the trainer starts with an empty one.
    pub fn restore(config: TrainConfig, archive: &Archive) -> Result<Self> {
        let mut t = Self::new(config)?;
        t.load_state(archive)?;
        Ok(t)
    }

    pub fn restore_with_env(config: TrainConfig, env: Box<dyn MultiAgentEnv + Send>, archive: &Archive) -> Result<Self> {
        let mut t = Self::with_env(config, env)?;
        t.load_state(archive)?;
        Ok(t)
    }

    fn load_state(&mut self, a: &Archive) -> Result<()> {
        let c = &self.config.agent;
        let expect = |name: &str, v: usize| -> Result<()> {
            if a.u64(name)? != v as u64 {
                return Err(CoreError::config(format!("checkpoint {name} does not match the configuration")));
            }
            Ok(())
        };
        expect("meta.n_agents", c.n_agents)?;
        expect("meta.obs_dim", c.obs_dim)?;
        expect("meta.embed_dim", c.embed_dim)?;
        expect("meta.critic_hidden", self.config.critic_hidden)?;
        self.nets = AgentNets::load(c.clone(), a, "online")?;
        self.target = AgentNets::load(c.clone(), a, "target")?;
        let load_critic = |name: &str, like: &Mlp| -> Result<Mlp> {
            let m = a.load_mlp(name)?;
            if !same_shape(&m, like) {
                return Err(CoreError::config(format!("checkpoint critic {name} has the wrong shape")));
            }
            Ok(m)
        };
        self.full = load_critic("full", &self.full)?;
        self.full_target = load_critic("full_target", &self.full)?;
        self.gain = load_critic("gain", &self.gain)?;
        self.gain_target = load_critic("gain_target", &self.gain)?;
        let fresh = self.opt.clone();
        for ((name, st), old) in OPT_NAMES.iter().zip(self.opt.all_mut()).zip(fresh.all()) {
            let loaded = a.load_adam(&format!("opt.{name}"))?;
            let same = loaded.m.len() == old.m.len() && loaded.m.iter().zip(&old.m).all(|(x, y)| x.len() == y.len());
            if !same {
                return Err(CoreError::config(format!("optimizer state {name} has the wrong layout")));
            }
            *st = loaded;
        }
        self.episode = a.u64("state.episode")?;
        self.updates = a.u64("state.updates")?;
        self.eval_points = a.u64("state.eval_points")?;
        let cal = a.vec("state.calibrator", Some(3))?;
        self.calibrator = LambdaCalibrator {
            lambda0: cal[0],
            smoothing: cal[1],
            rounds: cal[2] as u64,
        };
        let m = a.vec("state.calib_means", Some(3))?;
        self.calib_means = RunningMeans {
            count: m[0] as u64,
            mean_gain: m[1],
            mean_cost: m[2],
        };
        self.stats = LossStats::from_slice(&a.vec("state.stats", Some(10))?);
        if a.get("replay.data").is_some() {
            let len = a.u64("replay.len")? as usize;
            let data = a.vec("replay.data", None)?;
            let (n, o, md) = (c.n_agents, c.obs_dim, c.msg_dim());
            let mut at = 0;
            let mut items = Vec::with_capacity(len.min(self.config.replay_capacity));
            for _ in 0..len {
                items.push(TransitionRecord::read_flat(&data, &mut at, n, o, md)?);
            }
            if at != data.len() {
                return Err(CoreError::Decode("trailing replay data".into()));
            }
            self.replay = ReplayBuffer::restore_parts(self.config.replay_capacity, items, a.u64("replay.pushed")?)?;
        }
        Ok(())
    }
}

fn same_shape(a: &Mlp, b: &Mlp) -> bool {
    a.layers().len() == b.layers().len()
        && a.layers().iter().zip(b.layers()).all(|(x, y)| {
            x.in_dim() == y.in_dim() && x.out_dim() == y.out_dim() && x.activation() == y.activation() && x.has_bias() == y.has_bias()
        })
}

/// Mean and population standard deviation; `(0, 0)` for an empty slice.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, v.sqrt())
}

/// Returns of a uniformly random joint policy on the given episode seeds.
pub fn random_policy_returns<E: MultiAgentEnv + ?Sized>(env: &mut E, seeds: &[u64]) -> Result<Vec<f64>> {
    use rand::Rng;
    let n = env.n_agents();
    let mut out = Vec::with_capacity(seeds.len());
    for &s in seeds {
        env.reset(derive_key(s, Stream::EnvReset, &[]));
        let mut total = 0.0;
        for t in 0..env.episode_length() {
            let mut rng = substream(s, Stream::Action, &[t as u64, u64::MAX]);
            let acts: Vec<usize> = (0..n).map(|_| rng.gen_range(0..env.n_actions())).collect();
            let o = env.step(&acts)?;
            total += o.rewards.iter().sum::<f64>() / n as f64;
            if o.done {
                break;
            }
        }
        out.push(total);
    }
    Ok(out)
}

impl Variant {
    /// Whether the variant's request rule consults the learned gate.
    pub fn uses_gate(self) -> bool {
        RequestRule::for_variant(self) == RequestRule::Gate
    }
}
