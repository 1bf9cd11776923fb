//! Exactly solvable two-agent games with a delayed channel.
//!
//! Sender `j` observes the environment state `s` and transmits it every step
//! to receiver `i`. Each transmission draws a delay from a PMF over `1..=D`.
//! The augmented state is `(s, exposed, pending)`, where `exposed` is what `i`
//! reads this step and `pending[k]` is the most recently sent message that
//! will arrive `k + 1` steps from now. That chain is Markov, so values of
//! any stationary policy pair follow from one linear solve.

use nalgebra::{DMatrix, DVector};
use rand::distributions::{Distribution, Uniform};
use rand::Rng;

use cdcma_nn::ops::{kl_divergence, softmax};

use crate::error::{CoreError, Result};

pub const MAX_AUGMENTED_STATES: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct TabularGame {
    pub n_states: usize,
    /// Number of distinct local observations of the receiver.
    pub n_obs: usize,
    pub obs_of_state: Vec<usize>,
    pub n_actions_i: usize,
    pub n_actions_j: usize,
    /// `reward[(s · A_i + a_i) · A_j + a_j]`.
    pub reward: Vec<f64>,
    /// `transition[(s · A_i + a_i) · A_j + a_j]` is a distribution over `s'`.
    pub transition: Vec<Vec<f64>>,
    pub initial: Vec<f64>,
    /// Probabilities of delays `1..=D`.
    pub delay_pmf: Vec<f64>,
    pub gamma: f64,
    pub r_max: f64,
}

/// Receiver policy table indexed by local observation and message. Message
/// index `n_states` is the null message.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceiverPolicy {
    pub n_obs: usize,
    pub n_msgs: usize,
    pub n_actions: usize,
    pub probs: Vec<f64>,
}

impl ReceiverPolicy {
    pub fn dist(&self, obs: usize, msg: usize) -> &[f64] {
        let k = (obs * self.n_msgs + msg) * self.n_actions;
        &self.probs[k..k + self.n_actions]
    }

    /// Strictly positive softmax rows from random logits of scale `scale`.
    pub fn random<R: Rng + ?Sized>(game: &TabularGame, scale: f64, rng: &mut R) -> Self {
        let n_msgs = game.n_states + 1;
        let logit = Uniform::new_inclusive(-scale, scale);
        let mut probs = Vec::with_capacity(game.n_obs * n_msgs * game.n_actions_i);
        for _ in 0..game.n_obs * n_msgs {
            let z: Vec<f64> = (0..game.n_actions_i).map(|_| logit.sample(rng)).collect();
            probs.extend(softmax(&z, 1.0).expect("finite logits"));
        }
        Self {
            n_obs: game.n_obs,
            n_msgs,
            n_actions: game.n_actions_i,
            probs,
        }
    }

    /// The same distribution whatever the message says.
    pub fn ignoring_messages(&self) -> Self {
        let mut out = self.clone();
        for o in 0..self.n_obs {
            let base = self.dist(o, self.n_msgs - 1).to_vec();
            for m in 0..self.n_msgs {
                let k = (o * self.n_msgs + m) * self.n_actions;
                out.probs[k..k + self.n_actions].copy_from_slice(&base);
            }
        }
        out
    }
}

/// Which message the receiver's policy is fed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MessageUse {
    /// The message exposed by the delayed channel.
    Delayed,
    /// Always the null message.
    Masked,
    /// The sender's current state, as if there were no delay.
    Timely,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AugState {
    pub s: usize,
    /// `None` is the null message.
    pub exposed: Option<usize>,
    pub pending: [Option<usize>; MAX_DELAY - 1],
}

/// Longest delay the tabular chain supports.
pub const MAX_DELAY: usize = 3;

impl TabularGame {
    pub fn validate(&self) -> Result<()> {
        let s = self.n_states;
        let rows = s * self.n_actions_i * self.n_actions_j;
        let bad = s == 0
            || self.n_actions_i == 0
            || self.n_actions_j == 0
            || self.obs_of_state.len() != s
            || self.obs_of_state.iter().any(|&o| o >= self.n_obs)
            || self.reward.len() != rows
            || self.transition.len() != rows
            || self.transition.iter().any(|p| p.len() != s)
            || self.initial.len() != s
            || self.delay_pmf.is_empty()
            || self.delay_pmf.len() > MAX_DELAY
            || !(0.0..1.0).contains(&self.gamma)
            || self.reward.iter().any(|r| r.abs() > self.r_max);
        if bad {
            return Err(CoreError::config("malformed tabular game"));
        }
        Ok(())
    }

    pub fn max_delay(&self) -> usize {
        self.delay_pmf.len()
    }

    pub fn n_augmented(&self) -> usize {
        self.n_states * (self.n_states + 1).pow(self.max_delay() as u32)
    }

    fn msg_code(&self, m: Option<usize>) -> usize {
        m.unwrap_or(self.n_states)
    }

    fn msg_decode(&self, c: usize) -> Option<usize> {
        (c < self.n_states).then_some(c)
    }

    pub fn index(&self, x: &AugState) -> usize {
        let base = self.n_states + 1;
        let mut idx = 0;
        for k in (0..self.max_delay() - 1).rev() {
            idx = idx * base + self.msg_code(x.pending[k]);
        }
        idx = idx * base + self.msg_code(x.exposed);
        idx * self.n_states + x.s
    }

    pub fn state(&self, mut idx: usize) -> AugState {
        let base = self.n_states + 1;
        let s = idx % self.n_states;
        idx /= self.n_states;
        let exposed = self.msg_decode(idx % base);
        idx /= base;
        let mut pending = [None; MAX_DELAY - 1];
        for slot in pending.iter_mut().take(self.max_delay() - 1) {
            *slot = self.msg_decode(idx % base);
            idx /= base;
        }
        AugState { s, exposed, pending }
    }

    fn row(&self, s: usize, ai: usize, aj: usize) -> usize {
        (s * self.n_actions_i + ai) * self.n_actions_j + aj
    }

    pub fn reward_of(&self, s: usize, ai: usize, aj: usize) -> f64 {
        self.reward[self.row(s, ai, aj)]
    }

    /// Channel update after the sender transmits `s` with delay `d`.
    fn advance_buffer(&self, x: &AugState, d: usize) -> (Option<usize>, [Option<usize>; MAX_DELAY - 1]) {
        let dm = self.max_delay();
        let exposed = if d == 1 { Some(x.s) } else { x.pending[0] };
        let mut pending = [None; MAX_DELAY - 1];
        for k in 0..dm - 1 {
            let later = if k + 1 < dm - 1 { x.pending[k + 1] } else { None };
            pending[k] = if d == k + 2 { Some(x.s) } else { later };
        }
        (exposed, pending)
    }

    /// `(probability, next augmented index)` pairs for one joint action.
    pub fn successors(&self, x: &AugState, ai: usize, aj: usize) -> Vec<(f64, usize)> {
        let mut out = Vec::new();
        let p_next = &self.transition[self.row(x.s, ai, aj)];
        for (k, &pd) in self.delay_pmf.iter().enumerate() {
            if pd == 0.0 {
                continue;
            }
            let (exposed, pending) = self.advance_buffer(x, k + 1);
            for (s2, &ps) in p_next.iter().enumerate() {
                if ps == 0.0 {
                    continue;
                }
                let next = AugState { s: s2, exposed, pending };
                out.push((pd * ps, self.index(&next)));
            }
        }
        out
    }

    pub fn initial_index(&self, s: usize) -> usize {
        self.index(&AugState {
            s,
            exposed: None,
            pending: [None; MAX_DELAY - 1],
        })
    }

    /// A random game with rewards in `[-r_max, r_max]`.
    pub fn random<R: Rng + ?Sized>(
        rng: &mut R,
        n_states: usize,
        n_obs: usize,
        n_actions: usize,
        delay_pmf: Vec<f64>,
        gamma: f64,
    ) -> Self {
        let r_max = 1.0;
        let rows = n_states * n_actions * n_actions;
        let unit = Uniform::new(0.0f64, 1.0);
        let reward = (0..rows).map(|_| unit.sample(rng) * 2.0 - 1.0).collect();
        let transition = (0..rows)
            .map(|_| {
                let w: Vec<f64> = (0..n_states).map(|_| unit.sample(rng) + 0.05).collect();
                let t: f64 = w.iter().sum();
                w.into_iter().map(|v| v / t).collect()
            })
            .collect();
        let obs_of_state = (0..n_states).map(|s| if s < n_obs { s } else { rng.gen_range(0..n_obs) }).collect();
        let mut initial = vec![0.0; n_states];
        initial[rng.gen_range(0..n_states)] = 1.0;
        Self {
            n_states,
            n_obs,
            obs_of_state,
            n_actions_i: n_actions,
            n_actions_j: n_actions,
            reward,
            transition,
            initial,
            delay_pmf,
            gamma,
            r_max,
        }
    }
}

/// Sender policy table `probs[s · A_j + a_j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SenderPolicy {
    pub n_actions: usize,
    pub probs: Vec<f64>,
}

impl SenderPolicy {
    pub fn dist(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn random<R: Rng + ?Sized>(game: &TabularGame, rng: &mut R) -> Self {
        let logit = Uniform::new_inclusive(-2.0, 2.0);
        let mut probs = Vec::new();
        for _ in 0..game.n_states {
            let z: Vec<f64> = (0..game.n_actions_j).map(|_| logit.sample(rng)).collect();
            probs.extend(softmax(&z, 1.0).expect("finite logits"));
        }
        Self {
            n_actions: game.n_actions_j,
            probs,
        }
    }
}

/// A joint stationary policy on the augmented chain.
#[derive(Debug, Clone, Copy)]
pub struct JointPolicy<'a> {
    pub sender: &'a SenderPolicy,
    pub receiver: &'a ReceiverPolicy,
    pub usage: MessageUse,
}

impl JointPolicy<'_> {
    pub fn receiver_dist(&self, game: &TabularGame, x: &AugState) -> &[f64] {
        let msg = match self.usage {
            MessageUse::Delayed => x.exposed,
            MessageUse::Masked => None,
            MessageUse::Timely => Some(x.s),
        };
        self.receiver.dist(game.obs_of_state[x.s], game.msg_code(msg))
    }
}

/// Exact `V` and `Q` of a joint policy.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub values: Vec<f64>,
    /// `q[(x · A_i + a_i) · A_j + a_j]`.
    pub q: Vec<f64>,
    pub n_actions_i: usize,
    pub n_actions_j: usize,
}

impl Evaluation {
    pub fn q(&self, x: usize, ai: usize, aj: usize) -> f64 {
        self.q[(x * self.n_actions_i + ai) * self.n_actions_j + aj]
    }
}

fn check_size(game: &TabularGame) -> Result<usize> {
    game.validate()?;
    let n = game.n_augmented();
    if n > MAX_AUGMENTED_STATES {
        return Err(CoreError::Size(format!(
            "{n} augmented states exceed the limit of {MAX_AUGMENTED_STATES}"
        )));
    }
    Ok(n)
}

/// Solves `(I − γ·P_π) v = r` for an arbitrary per-state reward.
fn solve_values(game: &TabularGame, policy: &JointPolicy<'_>, state_reward: &[f64]) -> Result<Vec<f64>> {
    let n = check_size(game)?;
    let mut a = DMatrix::<f64>::identity(n, n);
    for x_idx in 0..n {
        let x = game.state(x_idx);
        let pi_i = policy.receiver_dist(game, &x);
        let pi_j = policy.sender.dist(x.s);
        for (ai, &pa) in pi_i.iter().enumerate() {
            for (aj, &pb) in pi_j.iter().enumerate() {
                let w = pa * pb;
                if w == 0.0 {
                    continue;
                }
                for (p, y) in game.successors(&x, ai, aj) {
                    a[(x_idx, y)] -= game.gamma * w * p;
                }
            }
        }
    }
    let b = DVector::from_column_slice(state_reward);
    let v = a
        .lu()
        .solve(&b)
        .ok_or_else(|| CoreError::Numeric("policy evaluation system is singular".into()))?;
    Ok(v.iter().copied().collect())
}

pub fn evaluate(game: &TabularGame, policy: &JointPolicy<'_>) -> Result<Evaluation> {
    let n = check_size(game)?;
    let mut r_pi = vec![0.0; n];
    for (x_idx, r) in r_pi.iter_mut().enumerate() {
        let x = game.state(x_idx);
        let pi_i = policy.receiver_dist(game, &x);
        let pi_j = policy.sender.dist(x.s);
        for (ai, &pa) in pi_i.iter().enumerate() {
            for (aj, &pb) in pi_j.iter().enumerate() {
                *r += pa * pb * game.reward_of(x.s, ai, aj);
            }
        }
    }
    let values = solve_values(game, policy, &r_pi)?;
    let (ai_n, aj_n) = (game.n_actions_i, game.n_actions_j);
    let mut q = vec![0.0; n * ai_n * aj_n];
    for x_idx in 0..n {
        let x = game.state(x_idx);
        for ai in 0..ai_n {
            for aj in 0..aj_n {
                let future: f64 = game.successors(&x, ai, aj).iter().map(|&(p, y)| p * values[y]).sum();
                q[(x_idx * ai_n + ai) * aj_n + aj] = game.reward_of(x.s, ai, aj) + game.gamma * future;
            }
        }
    }
    Ok(Evaluation {
        values,
        q,
        n_actions_i: ai_n,
        n_actions_j: aj_n,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GainTable {
    /// `Q^(+j) − Q^(0)`, laid out like [`Evaluation::q`].
    pub gain: Vec<f64>,
    pub max_abs: f64,
    /// `2·R_max / (1 − γ)`.
    pub bound: f64,
}

/// Exact communication gain: the receiver using the sender's delayed
/// messages versus masking them, everything else equal.
pub fn exact_gain(game: &TabularGame, sender: &SenderPolicy, receiver: &ReceiverPolicy) -> Result<GainTable> {
    let with = evaluate(
        game,
        &JointPolicy {
            sender,
            receiver,
            usage: MessageUse::Delayed,
        },
    )?;
    let without = evaluate(
        game,
        &JointPolicy {
            sender,
            receiver,
            usage: MessageUse::Masked,
        },
    )?;
    let gain: Vec<f64> = with.q.iter().zip(&without.q).map(|(a, b)| a - b).collect();
    let max_abs = gain.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    Ok(GainTable {
        gain,
        max_abs,
        bound: 2.0 * game.r_max / (1.0 - game.gamma),
    })
}

/// One discounted-return sample of `Q(x, a_i, a_j)` truncated at `horizon`.
pub fn sample_return<R: Rng + ?Sized>(
    game: &TabularGame,
    policy: &JointPolicy<'_>,
    x: usize,
    ai: usize,
    aj: usize,
    horizon: usize,
    rng: &mut R,
) -> f64 {
    let pick = |p: &[f64], rng: &mut R| -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (k, &w) in p.iter().enumerate() {
            acc += w;
            if u < acc {
                return k;
            }
        }
        p.len() - 1
    };
    let mut state = game.state(x);
    let (mut a, mut b) = (ai, aj);
    let mut total = 0.0;
    let mut discount = 1.0;
    for _ in 0..horizon {
        total += discount * game.reward_of(state.s, a, b);
        discount *= game.gamma;
        let succ = game.successors(&state, a, b);
        let probs: Vec<f64> = succ.iter().map(|s| s.0).collect();
        state = game.state(succ[pick(&probs, rng)].1);
        a = pick(policy.receiver_dist(game, &state), rng);
        b = pick(policy.sender.dist(state.s), rng);
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundCheck {
    /// `J_timely − J_delayed`.
    pub lhs: f64,
    /// `L · E_timely[Σ γ^t √Δ_info]`.
    pub rhs: f64,
    pub lipschitz: f64,
    pub holds: bool,
}

/// `L = 2·(R_max + γ·R_max/(1 − γ))`.
pub fn lipschitz_constant(r_max: f64, gamma: f64) -> f64 {
    2.0 * (r_max + gamma * r_max / (1.0 - gamma))
}

/// Compares the timely and delayed receiver on the same chain.
///
/// Both sides are exact: the expectation on the right is itself a value
/// function (reward `√Δ_info`) of the timely policy.
pub fn value_loss_bound(
    game: &TabularGame,
    sender: &SenderPolicy,
    receiver: &ReceiverPolicy,
    lipschitz: f64,
) -> Result<BoundCheck> {
    let timely = JointPolicy {
        sender,
        receiver,
        usage: MessageUse::Timely,
    };
    let delayed = JointPolicy {
        sender,
        receiver,
        usage: MessageUse::Delayed,
    };
    let ev_t = evaluate(game, &timely)?;
    let ev_d = evaluate(game, &delayed)?;
    let n = game.n_augmented();
    let mut sqrt_gap = vec![0.0; n];
    for (x_idx, g) in sqrt_gap.iter_mut().enumerate() {
        let x = game.state(x_idx);
        let p = timely.receiver_dist(game, &x);
        let q = delayed.receiver_dist(game, &x);
        *g = kl_divergence(p, q)?.sqrt();
    }
    let w = solve_values(game, &timely, &sqrt_gap)?;
    let start = |v: &[f64]| -> f64 {
        game.initial
            .iter()
            .enumerate()
            .map(|(s, &p)| p * v[game.initial_index(s)])
            .sum()
    };
    let lhs = start(&ev_t.values) - start(&ev_d.values);
    let rhs = lipschitz * start(&w);
    Ok(BoundCheck {
        lhs,
        rhs,
        lipschitz,
        holds: lhs <= rhs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn augmented_index_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = TabularGame::random(&mut rng, 3, 2, 2, vec![0.5, 0.3, 0.2], 0.9);
        for idx in 0..g.n_augmented() {
            assert_eq!(g.index(&g.state(idx)), idx);
        }
    }

    #[test]
    fn successor_probabilities_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = TabularGame::random(&mut rng, 3, 2, 2, vec![0.6, 0.4], 0.9);
        for idx in 0..g.n_augmented() {
            let total: f64 = g.successors(&g.state(idx), 1, 0).iter().map(|s| s.0).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn delay_one_exposes_the_previous_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = TabularGame::random(&mut rng, 2, 2, 2, vec![1.0], 0.9);
        let x = g.state(g.initial_index(1));
        for (_, y) in g.successors(&x, 0, 0) {
            assert_eq!(g.state(y).exposed, Some(1));
        }
    }

    #[test]
    fn oversized_chain_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = TabularGame::random(&mut rng, 12, 2, 2, vec![0.5, 0.5], 0.9);
        let s = SenderPolicy::random(&g, &mut rng);
        let r = ReceiverPolicy::random(&g, 1.0, &mut rng);
        assert!(matches!(exact_gain(&g, &s, &r), Err(CoreError::Size(_))));
    }
}
