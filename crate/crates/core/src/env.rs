//! Particle tasks without teammate vision.
//!
//! Agents are unit-mass points in `[-1, 1]²`. An action applies an
//! acceleration of 0.5 along one axis (or none for `stop`); velocity is damped
//! by 0.75 each step and positions are Euler-integrated with `Δt = 0.1`.
//!
//! Observation layouts:
//!
//! * Cooperative navigation: `[px, py, vx, vy]` followed by the relative
//!   position of every landmark, nearest first. Dimension `4 + 2·L`.
//! * Predator-prey: `[px, py, vx, vy]` followed by relative position and
//!   relative velocity of the three nearest prey, nearest first, zero-padded.
//!   Dimension 16.
//!
//! Neither layout contains any teammate feature.

use std::fmt;
use std::str::FromStr;

use rand::distributions::{Distribution, Uniform};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::error::{CoreError, Result};
use crate::rng::{derive_key, substream, Stream};

pub const N_ACTIONS: usize = 5;
pub const DEFAULT_EPISODE_LENGTH: usize = 60;
pub const ARENA: f64 = 1.0;
pub const DT: f64 = 0.1;
pub const DAMPING: f64 = 0.75;
pub const ACCEL: f64 = 0.5;
pub const PREY_ACCEL: f64 = 0.4;
pub const PREY_NOISE: f64 = 0.3;
pub const COLLISION_DIST: f64 = 0.1;
pub const COLLISION_PENALTY: f64 = 0.25;
pub const CAPTURE_DIST: f64 = 0.1;
pub const PP_OBSERVED_PREY: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
    Stop,
}

impl Action {
    pub const ALL: [Action; N_ACTIONS] = [Action::Up, Action::Down, Action::Left, Action::Right, Action::Stop];

    pub fn from_index(i: usize) -> Option<Action> {
        Self::ALL.get(i).copied()
    }

    pub fn direction(self) -> [f64; 2] {
        match self {
            Action::Up => [0.0, 1.0],
            Action::Down => [0.0, -1.0],
            Action::Left => [-1.0, 0.0],
            Action::Right => [1.0, 0.0],
            Action::Stop => [0.0, 0.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    CooperativeNavigation,
    PredatorPrey,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::CooperativeNavigation => "cn",
            Task::PredatorPrey => "pp",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cn" | "cooperative_navigation" => Ok(Task::CooperativeNavigation),
            "pp" | "predator_prey" => Ok(Task::PredatorPrey),
            other => Err(CoreError::config(format!("unknown task {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskConfig {
    pub task: Task,
    pub n_agents: usize,
    /// Landmarks (navigation) or prey (predator-prey).
    pub n_targets: usize,
    pub episode_length: usize,
}

impl TaskConfig {
    pub fn cooperative_navigation(n_agents: usize) -> Self {
        Self {
            task: Task::CooperativeNavigation,
            n_agents,
            n_targets: n_agents,
            episode_length: DEFAULT_EPISODE_LENGTH,
        }
    }

    pub fn predator_prey(n_agents: usize) -> Self {
        Self {
            task: Task::PredatorPrey,
            n_agents,
            n_targets: 1,
            episode_length: DEFAULT_EPISODE_LENGTH,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_agents < 2 {
            return Err(CoreError::config("tasks need at least two agents"));
        }
        if self.n_targets == 0 {
            return Err(CoreError::config("tasks need at least one landmark or prey"));
        }
        if self.episode_length == 0 {
            return Err(CoreError::config("episode length must be positive"));
        }
        Ok(())
    }

    pub fn obs_dim(&self) -> usize {
        match self.task {
            Task::CooperativeNavigation => 4 + 2 * self.n_targets,
            Task::PredatorPrey => 4 + 4 * PP_OBSERVED_PREY,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub obs: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub done: bool,
}

/// The interface the trainer drives. All agents act every step.
pub trait MultiAgentEnv {
    fn n_agents(&self) -> usize;
    fn obs_dim(&self) -> usize;
    fn n_actions(&self) -> usize {
        N_ACTIONS
    }
    fn episode_length(&self) -> usize;
    fn reset(&mut self, seed: u64) -> Vec<Vec<f64>>;
    fn step(&mut self, actions: &[usize]) -> Result<StepOutcome>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Body {
    pub pos: [f64; 2],
    pub vel: [f64; 2],
}

impl Body {
    fn at(pos: [f64; 2]) -> Self {
        Self { pos, vel: [0.0, 0.0] }
    }

    fn integrate(&mut self, accel: [f64; 2]) {
        for k in 0..2 {
            self.vel[k] = DAMPING * self.vel[k] + accel[k] * DT;
            self.pos[k] = (self.pos[k] + self.vel[k] * DT).clamp(-ARENA, ARENA);
        }
    }
}

pub fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub agents: Vec<Body>,
    /// Landmarks (static) or prey.
    pub targets: Vec<Body>,
    pub step: usize,
}

#[derive(Debug, Clone)]
pub struct ParticleEnv {
    config: TaskConfig,
    state: WorldState,
    seed: u64,
}

impl ParticleEnv {
    pub fn new(config: TaskConfig) -> Result<Self> {
        config.validate()?;
        let state = WorldState {
            agents: vec![Body::at([0.0, 0.0]); config.n_agents],
            targets: vec![Body::at([0.0, 0.0]); config.n_targets],
            step: 0,
        };
        Ok(Self { config, state, seed: 0 })
    }

    pub fn config(&self) -> &TaskConfig {
        &self.config
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    /// Replaces the world state, e.g. to set up a hand-built scenario.
    pub fn set_state(&mut self, state: WorldState) -> Result<()> {
        if state.agents.len() != self.config.n_agents || state.targets.len() != self.config.n_targets {
            return Err(CoreError::contract("state does not match the task shape"));
        }
        self.state = state;
        Ok(())
    }

    pub fn observations(&self) -> Vec<Vec<f64>> {
        (0..self.config.n_agents).map(|i| self.observe(i)).collect()
    }

    fn observe(&self, i: usize) -> Vec<f64> {
        let me = &self.state.agents[i];
        let mut obs = Vec::with_capacity(self.config.obs_dim());
        obs.extend_from_slice(&me.pos);
        obs.extend_from_slice(&me.vel);
        let mut order: Vec<usize> = (0..self.state.targets.len()).collect();
        order.sort_by(|&a, &b| {
            dist(me.pos, self.state.targets[a].pos)
                .total_cmp(&dist(me.pos, self.state.targets[b].pos))
                .then(a.cmp(&b))
        });
        match self.config.task {
            Task::CooperativeNavigation => {
                for &k in &order {
                    let t = &self.state.targets[k];
                    obs.push(t.pos[0] - me.pos[0]);
                    obs.push(t.pos[1] - me.pos[1]);
                }
            }
            Task::PredatorPrey => {
                for slot in 0..PP_OBSERVED_PREY {
                    match order.get(slot) {
                        Some(&k) => {
                            let t = &self.state.targets[k];
                            obs.push(t.pos[0] - me.pos[0]);
                            obs.push(t.pos[1] - me.pos[1]);
                            obs.push(t.vel[0] - me.vel[0]);
                            obs.push(t.vel[1] - me.vel[1]);
                        }
                        None => obs.extend_from_slice(&[0.0; 4]),
                    }
                }
            }
        }
        obs
    }

    /// Team reward for the current state.
    pub fn reward(&self) -> f64 {
        reward_of(self.config.task, &self.state)
    }

    /// Scripted prey: accelerate away from the nearest predator, plus noise.
    pub fn prey_accelerations(&self, rng: &mut impl Rng) -> Vec<[f64; 2]> {
        prey_accelerations(&self.state, rng)
    }
}

/// Team reward of a state.
///
/// Navigation: `−(1/N)·Σ_landmarks min_agent dist − 0.25·#colliding pairs`.
/// Predator-prey: `−min dist(predator, prey) + #(predator, prey) pairs
/// closer than the capture distance`.
pub fn reward_of(task: Task, state: &WorldState) -> f64 {
    let n = state.agents.len();
    match task {
        Task::CooperativeNavigation => {
            let cover: f64 = state
                .targets
                .iter()
                .map(|l| {
                    state
                        .agents
                        .iter()
                        .map(|a| dist(a.pos, l.pos))
                        .fold(f64::INFINITY, f64::min)
                })
                .sum();
            let mut collisions = 0usize;
            for a in 0..n {
                for b in a + 1..n {
                    if dist(state.agents[a].pos, state.agents[b].pos) < COLLISION_DIST {
                        collisions += 1;
                    }
                }
            }
            -cover / n as f64 - COLLISION_PENALTY * collisions as f64
        }
        Task::PredatorPrey => {
            let mut min = f64::INFINITY;
            let mut captures = 0usize;
            for a in &state.agents {
                for p in &state.targets {
                    let d = dist(a.pos, p.pos);
                    min = min.min(d);
                    if d < CAPTURE_DIST {
                        captures += 1;
                    }
                }
            }
            -min + captures as f64
        }
    }
}

pub fn prey_accelerations(state: &WorldState, rng: &mut impl Rng) -> Vec<[f64; 2]> {
    let noise = Uniform::new_inclusive(-PREY_NOISE, PREY_NOISE);
    state
        .targets
        .iter()
        .map(|prey| {
            let nearest = state
                .agents
                .iter()
                .min_by(|a, b| dist(a.pos, prey.pos).total_cmp(&dist(b.pos, prey.pos)))
                .expect("at least one predator");
            let away = [prey.pos[0] - nearest.pos[0], prey.pos[1] - nearest.pos[1]];
            let len = (away[0] * away[0] + away[1] * away[1]).sqrt();
            let unit = if len > 0.0 { [away[0] / len, away[1] / len] } else { [0.0, 0.0] };
            let n = [noise.sample(rng), noise.sample(rng)];
            [PREY_ACCEL * (unit[0] + n[0]), PREY_ACCEL * (unit[1] + n[1])]
        })
        .collect()
}

impl MultiAgentEnv for ParticleEnv {
    fn n_agents(&self) -> usize {
        self.config.n_agents
    }

    fn obs_dim(&self) -> usize {
        self.config.obs_dim()
    }

    fn episode_length(&self) -> usize {
        self.config.episode_length
    }

    fn reset(&mut self, seed: u64) -> Vec<Vec<f64>> {
        self.seed = seed;
        let mut rng = substream(seed, Stream::EnvReset, &[]);
        let coord = Uniform::new_inclusive(-ARENA, ARENA);
        let mut place = || Body::at([coord.sample(&mut rng), coord.sample(&mut rng)]);
        let agents = (0..self.config.n_agents).map(|_| place()).collect();
        let targets = (0..self.config.n_targets).map(|_| place()).collect();
        self.state = WorldState {
            agents,
            targets,
            step: 0,
        };
        self.observations()
    }

    fn step(&mut self, actions: &[usize]) -> Result<StepOutcome> {
        if self.state.step >= self.config.episode_length {
            return Err(CoreError::contract("step called after the episode ended"));
        }
        if actions.len() != self.config.n_agents {
            return Err(CoreError::contract(format!(
                "{} actions for {} agents",
                actions.len(),
                self.config.n_agents
            )));
        }
        let mut accels = Vec::with_capacity(actions.len());
        for &a in actions {
            let action = Action::from_index(a)
                .ok_or_else(|| CoreError::contract(format!("action {a} out of range")))?;
            let d = action.direction();
            accels.push([ACCEL * d[0], ACCEL * d[1]]);
        }
        if self.config.task == Task::PredatorPrey {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_key(
                self.seed,
                Stream::PreyNoise,
                &[self.state.step as u64],
            ));
            let prey = prey_accelerations(&self.state, &mut rng);
            for (body, acc) in self.state.targets.iter_mut().zip(prey) {
                body.integrate(acc);
            }
        }
        for (body, acc) in self.state.agents.iter_mut().zip(accels) {
            body.integrate(acc);
        }
        self.state.step += 1;
        let r = self.reward();
        Ok(StepOutcome {
            obs: self.observations(),
            rewards: vec![r; self.config.n_agents],
            done: self.state.step == self.config.episode_length,
        })
    }
}
