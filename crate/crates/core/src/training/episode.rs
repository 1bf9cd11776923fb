//! One episode of decentralized execution over the delay channel.
//!
//! Each step runs the phases in a fixed order, enforced by [`PhaseClock`]:
//! deliver arrivals, select partners, generate and enqueue messages,
//! aggregate, act, step the environment, store the transition.

use rand::Rng;

use crate::agent::{choose_action, request_mask, AgentNets, MsgRef, Variant};
use crate::channel::{DelayBuffer, DelaySpec};
use crate::env::{MultiAgentEnv, N_ACTIONS};
use crate::error::{CoreError, Result};
use crate::rng::{derive_key, keyed_uniform, substream, Stream};

use super::record::{empty_mailbox, mailbox_from_inbox, Mailbox, Received, TransitionRecord};

/// Prior attached to a request made by exploration while the predicted
/// score was not positive. Keeps every stored prior strictly positive.
pub const EXPLORATION_PRIOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Deliver,
    Select,
    Send,
    Aggregate,
    Act,
    EnvStep,
    Store,
}

impl Phase {
    fn next(self) -> Phase {
        match self {
            Phase::Deliver => Phase::Select,
            Phase::Select => Phase::Send,
            Phase::Send => Phase::Aggregate,
            Phase::Aggregate => Phase::Act,
            Phase::Act => Phase::EnvStep,
            Phase::EnvStep => Phase::Store,
            Phase::Store => Phase::Deliver,
        }
    }
}

/// Rejects any deviation from the per-step phase order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhaseClock {
    expected: Phase,
    step: usize,
}

impl Default for PhaseClock {
    fn default() -> Self {
        Self {
            expected: Phase::Deliver,
            step: 0,
        }
    }
}

impl PhaseClock {
    pub fn step(&self) -> usize {
        self.step
    }

    pub fn enter(&mut self, phase: Phase) -> Result<()> {
        if phase != self.expected {
            return Err(CoreError::contract(format!(
                "phase {phase:?} entered at step {} while {:?} was due",
                self.step, self.expected
            )));
        }
        if phase == Phase::Store {
            self.step += 1;
        }
        self.expected = phase.next();
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RequestRule {
    /// Request when the predicted score is positive.
    Gate,
    All,
    Never,
}

impl RequestRule {
    pub fn for_variant(v: Variant) -> Self {
        match v {
            Variant::NoDcos => RequestRule::All,
            Variant::NoComm => RequestRule::Never,
            _ => RequestRule::Gate,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutSettings {
    pub greedy: bool,
    /// Probability of replacing the sampled action with a uniform one.
    pub action_epsilon: f64,
    /// Probability of requesting from a teammate the gate rejected.
    pub request_epsilon: f64,
    pub requests: RequestRule,
}

impl RolloutSettings {
    pub fn evaluation(variant: Variant) -> Self {
        Self {
            greedy: true,
            action_epsilon: 0.0,
            request_epsilon: 0.0,
            requests: RequestRule::for_variant(variant),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub seed: u64,
    pub records: Vec<TransitionRecord>,
    /// Mean agent reward at each step.
    pub step_rewards: Vec<f64>,
    /// Gate decisions that opened, out of `request_slots` ordered pairs.
    pub requests: usize,
    pub request_slots: usize,
}

impl EpisodeTrace {
    pub fn total_reward(&self) -> f64 {
        self.step_rewards.iter().sum()
    }

    pub fn request_rate(&self) -> f64 {
        if self.request_slots == 0 {
            0.0
        } else {
            self.requests as f64 / self.request_slots as f64
        }
    }
}

fn refs(list: &[Received]) -> Vec<MsgRef<'_>> {
    list.iter()
        .map(|r| MsgRef {
            sender: r.sender,
            payload: &r.payload,
            prior: r.prior,
        })
        .collect()
}

/// Builds sender `j`'s outgoing payload from what it heard this step.
fn outgoing(nets: &AgentNets, j: usize, e: &[f64], obs: &[f64], heard: &[Received]) -> Result<Vec<f64>> {
    let h = nets.config.effective_horizon();
    if h == 0 {
        return nets.build_message(e, &[]);
    }
    let msgs = refs(heard);
    let preds = nets.predict_actions(j, obs, &msgs)?;
    let flat = nets.flatten_predictions(&msgs, &preds);
    let traj = nets.rollout(j, e, obs, &msgs, &flat, h)?;
    nets.build_message(e, &traj)
}

/// Runs one episode. All randomness is keyed by `episode_seed`, so the same
/// seed, weights and settings reproduce the trace bit for bit.
pub fn run_episode<E: MultiAgentEnv + ?Sized>(
    env: &mut E,
    nets: &AgentNets,
    delay: &DelaySpec,
    settings: &RolloutSettings,
    episode_seed: u64,
) -> Result<EpisodeTrace> {
    let n = env.n_agents();
    if n != nets.config.n_agents || env.obs_dim() != nets.config.obs_dim {
        return Err(CoreError::contract("agent networks do not match the environment"));
    }
    let delay_free = delay.is_delay_free();
    let mut buffer = DelayBuffer::new(n, delay_free);
    let mut clock = PhaseClock::default();
    let mut obs = env.reset(derive_key(episode_seed, Stream::EnvReset, &[]));
    let mut prev = vec![vec![0.0; nets.config.embed_dim]; n];
    let mut trace = EpisodeTrace {
        seed: episode_seed,
        records: Vec::with_capacity(env.episode_length()),
        step_rewards: Vec::with_capacity(env.episode_length()),
        requests: 0,
        request_slots: 0,
    };

    for t in 0..env.episode_length() {
        let tk = t as u64;
        clock.enter(Phase::Deliver)?;
        let heard = mailbox_from_inbox(&buffer.deliver_arrivals(tk)?);

        clock.enter(Phase::Select)?;
        let mut emb = Vec::with_capacity(n);
        for i in 0..n {
            emb.push(nets.encode(i, &obs[i], &prev[i])?);
        }
        // requested[i][j] = Some(prior)
        let mut requested: Vec<Vec<Option<f64>>> = vec![vec![None; n]; n];
        for i in 0..n {
            match settings.requests {
                RequestRule::Never => {}
                RequestRule::All => (0..n).filter(|&j| j != i).for_each(|j| requested[i][j] = Some(1.0)),
                RequestRule::Gate => {
                    let scores = nets.dcos_scores(i, &obs[i], &refs(&heard[i]))?;
                    let gate = request_mask(&scores, i);
                    for j in (0..n).filter(|&j| j != i) {
                        if gate[j] {
                            requested[i][j] = Some(scores[j]);
                        } else if settings.request_epsilon > 0.0
                            && keyed_uniform(episode_seed, Stream::Request, &[tk, i as u64, j as u64])
                                < settings.request_epsilon
                        {
                            requested[i][j] = Some(scores[j].max(EXPLORATION_PRIOR));
                        }
                    }
                }
            }
            trace.request_slots += n - 1;
            trace.requests += requested[i].iter().filter(|r| r.is_some()).count();
        }

        clock.enter(Phase::Send)?;
        for j in 0..n {
            if !(0..n).any(|i| requested[i][j].is_some()) {
                continue;
            }
            let payload = outgoing(nets, j, &emb[j], &obs[j], &heard[j])?;
            for i in 0..n {
                if let Some(prior) = requested[i][j] {
                    let d = if delay_free { 0 } else { delay.delay_at(episode_seed, j, i, t) as u64 };
                    buffer.enqueue(j, i, tk, d, payload.clone(), prior)?;
                }
            }
        }

        clock.enter(Phase::Aggregate)?;
        let consumed: Mailbox = if delay_free {
            mailbox_from_inbox(&buffer.deliver_immediate()?)
        } else {
            heard.clone()
        };
        let mut probs = Vec::with_capacity(n);
        for i in 0..n {
            let agg = nets.aggregate(&emb[i], &refs(&consumed[i]))?;
            probs.push(nets.policy(i, &emb[i], &agg)?);
        }

        clock.enter(Phase::Act)?;
        let actions: Vec<usize> = probs
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let mut rng = substream(episode_seed, Stream::Action, &[tk, i as u64]);
                if settings.action_epsilon > 0.0 && rng.gen::<f64>() < settings.action_epsilon {
                    rng.gen_range(0..N_ACTIONS)
                } else {
                    choose_action(p, settings.greedy, &mut rng)
                }
            })
            .collect();

        clock.enter(Phase::EnvStep)?;
        let out = env.step(&actions)?;

        clock.enter(Phase::Store)?;
        if let Some(last) = trace.records.last_mut() {
            last.next_consumed = consumed.clone();
        }
        trace.step_rewards.push(out.rewards.iter().sum::<f64>() / n as f64);
        trace.records.push(TransitionRecord {
            obs: std::mem::take(&mut obs),
            prev_embedding: std::mem::replace(&mut prev, emb.clone()),
            actions,
            rewards: out.rewards,
            next_obs: out.obs.clone(),
            done: out.done,
            heard,
            consumed,
            next_consumed: empty_mailbox(n),
            embeddings: emb,
        });
        obs = out.obs;
        if out.done {
            break;
        }
    }
    Ok(trace)
}
