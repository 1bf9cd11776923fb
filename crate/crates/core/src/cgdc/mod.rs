//! Gain/cost scoring of received messages.
//!
//! A gain critic `Q^gain_i(a_i, o_{-j}, a_{-ij}, m)` scores agent `i`'s
//! candidate actions given what it heard from sender `j`. From it we get a
//! tempered policy `softmax(η·Q)`, the delay cost `KL(π̃(m_tar) ‖ π̃(m_r))`,
//! the gain surrogate `Q(m_r) − Q(∅)` and the combined score
//! `c = V̂g − λ·Vc`.

pub mod tabular;

use cdcma_nn::ops::{kl_divergence, softmax, total_variation};
use cdcma_nn::{Matrix, Mlp};

use crate::env::N_ACTIONS;
use crate::error::{CoreError, Result};

pub const DEFAULT_ETA: f64 = 1.0;
pub const CALIBRATION_EPS: f64 = 1e-6;

/// Input layout of the gain critic.
///
/// `[onehot(a_i) | o_k for k ≠ j ascending | onehot(a_k) for k ∉ {i, j}
/// ascending | payload | presence | onehot(i) | onehot(j)]`
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GainLayout {
    pub n_agents: usize,
    pub obs_dim: usize,
    pub msg_dim: usize,
}

/// The joint context for one ordered pair: receiver `i` hearing sender `j`.
#[derive(Debug, Clone, Copy)]
pub struct PairContext<'a> {
    pub receiver: usize,
    pub sender: usize,
    pub obs: &'a [Vec<f64>],
    pub actions: &'a [usize],
}

impl GainLayout {
    pub fn input_dim(&self) -> usize {
        let n = self.n_agents;
        N_ACTIONS + (n - 1) * self.obs_dim + (n - 2) * N_ACTIONS + self.msg_dim + 1 + 2 * n
    }

    fn action_offset(&self) -> usize {
        0
    }

    /// Writes one input row; the receiver's action is `action_i`, overriding
    /// whatever the context holds for it.
    pub fn encode_into(&self, ctx: &PairContext<'_>, action_i: usize, msg: Option<&[f64]>, row: &mut [f64]) -> Result<()> {
        let n = self.n_agents;
        if row.len() != self.input_dim() {
            return Err(CoreError::contract("gain input row has the wrong width"));
        }
        if ctx.receiver == ctx.sender || ctx.receiver >= n || ctx.sender >= n {
            return Err(CoreError::contract("gain context needs two distinct agents"));
        }
        if ctx.obs.len() != n || ctx.actions.len() != n || action_i >= N_ACTIONS {
            return Err(CoreError::contract("gain context has the wrong shape"));
        }
        row.fill(0.0);
        let mut at = self.action_offset();
        row[at + action_i] = 1.0;
        at += N_ACTIONS;
        for k in (0..n).filter(|&k| k != ctx.sender) {
            let o = &ctx.obs[k];
            if o.len() != self.obs_dim {
                return Err(CoreError::contract("observation has the wrong width"));
            }
            row[at..at + self.obs_dim].copy_from_slice(o);
            at += self.obs_dim;
        }
        for k in (0..n).filter(|&k| k != ctx.sender && k != ctx.receiver) {
            let a = ctx.actions[k];
            if a >= N_ACTIONS {
                return Err(CoreError::contract("action out of range"));
            }
            row[at + a] = 1.0;
            at += N_ACTIONS;
        }
        if let Some(m) = msg {
            if m.len() != self.msg_dim {
                return Err(CoreError::contract("message has the wrong width"));
            }
            row[at..at + self.msg_dim].copy_from_slice(m);
            row[at + self.msg_dim] = 1.0;
        }
        at += self.msg_dim + 1;
        row[at + ctx.receiver] = 1.0;
        row[at + n + ctx.sender] = 1.0;
        Ok(())
    }

    pub fn encode(&self, ctx: &PairContext<'_>, action_i: usize, msg: Option<&[f64]>) -> Result<Vec<f64>> {
        let mut row = vec![0.0; self.input_dim()];
        self.encode_into(ctx, action_i, msg, &mut row)?;
        Ok(row)
    }

    /// Rows for every candidate action of the receiver.
    pub fn encode_all_actions(&self, ctx: &PairContext<'_>, msg: Option<&[f64]>) -> Result<Matrix> {
        let mut m = Matrix::zeros(N_ACTIONS, self.input_dim());
        for a in 0..N_ACTIONS {
            self.encode_into(ctx, a, msg, m.row_mut(a))?;
        }
        Ok(m)
    }
}

fn finite(values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(CoreError::Numeric("gain critic produced a non-finite value".into()))
    }
}

/// `softmax(η·q)` over per-action critic values.
pub fn tempered_from_values(q: &[f64], eta: f64) -> Result<Vec<f64>> {
    finite(q)?;
    Ok(softmax(q, eta)?)
}

/// Critic values for every candidate action of the receiver.
pub fn action_values(critic: &Mlp, layout: &GainLayout, ctx: &PairContext<'_>, msg: Option<&[f64]>) -> Result<Vec<f64>> {
    let x = layout.encode_all_actions(ctx, msg)?;
    let q = critic.predict(&x)?.into_vec();
    finite(&q)?;
    Ok(q)
}

pub fn tempered_policy(
    critic: &Mlp,
    layout: &GainLayout,
    ctx: &PairContext<'_>,
    msg: Option<&[f64]>,
    eta: f64,
) -> Result<Vec<f64>> {
    tempered_from_values(&action_values(critic, layout, ctx, msg)?, eta)
}

/// `Vc = KL(π̃(m_tar) ‖ π̃(m_recv))`; `None` is the null message.
pub fn delay_cost(
    critic: &Mlp,
    layout: &GainLayout,
    ctx: &PairContext<'_>,
    m_tar: Option<&[f64]>,
    m_recv: Option<&[f64]>,
    eta: f64,
) -> Result<f64> {
    let p = tempered_policy(critic, layout, ctx, m_tar, eta)?;
    let q = tempered_policy(critic, layout, ctx, m_recv, eta)?;
    Ok(kl_divergence(&p, &q)?)
}

/// `V̂g = Q(a_i, …, m_recv) − Q(a_i, …, ∅)` at the receiver's realized action.
pub fn gain_surrogate(critic: &Mlp, layout: &GainLayout, ctx: &PairContext<'_>, m_recv: Option<&[f64]>) -> Result<f64> {
    let a = ctx.actions[ctx.receiver];
    let rows = Matrix::from_rows(&[layout.encode(ctx, a, m_recv)?, layout.encode(ctx, a, None)?])?;
    let q = critic.predict(&rows)?.into_vec();
    finite(&q)?;
    // identical rows give an exact zero without relying on the subtraction
    if m_recv.is_none() {
        return Ok(0.0);
    }
    Ok(q[0] - q[1])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgdcScore {
    pub gain: f64,
    pub cost: f64,
    pub lambda: f64,
    pub score: f64,
}

impl CgdcScore {
    pub fn new(gain: f64, cost: f64, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0) {
            return Err(CoreError::contract(format!("lambda must be non-negative, got {lambda}")));
        }
        if !(cost >= 0.0) {
            return Err(CoreError::contract(format!("delay cost must be non-negative, got {cost}")));
        }
        if !gain.is_finite() || !cost.is_finite() || !lambda.is_finite() {
            return Err(CoreError::Numeric("non-finite score component".into()));
        }
        Ok(Self {
            gain,
            cost,
            lambda,
            score: gain - lambda * cost,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Calibration {
    Ok(f64),
    /// Mean cost below the guard; the caller should fall back to `λ₀ = 1`.
    DegenerateCost { fallback: f64 },
}

impl Calibration {
    pub fn value(self) -> f64 {
        match self {
            Calibration::Ok(v) => v,
            Calibration::DegenerateCost { fallback } => fallback,
        }
    }
}

/// `λ₀ = mean(V̂g) / mean(Vc)` over a batch of `(gain, cost)` pairs.
pub fn calibrate_lambda0(batch: &[(f64, f64)]) -> Result<Calibration> {
    let mut acc = RunningMeans::default();
    for &(g, c) in batch {
        acc.push(g, c);
    }
    acc.calibration()
}

/// Incremental means of gain and cost.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunningMeans {
    pub count: u64,
    pub mean_gain: f64,
    pub mean_cost: f64,
}

impl RunningMeans {
    pub fn push(&mut self, gain: f64, cost: f64) {
        self.count += 1;
        let k = self.count as f64;
        self.mean_gain += (gain - self.mean_gain) / k;
        self.mean_cost += (cost - self.mean_cost) / k;
    }

    pub fn calibration(&self) -> Result<Calibration> {
        if self.count == 0 {
            return Err(CoreError::contract("calibration batch is empty"));
        }
        if self.mean_cost <= CALIBRATION_EPS {
            return Ok(Calibration::DegenerateCost { fallback: 1.0 });
        }
        Ok(Calibration::Ok(self.mean_gain / self.mean_cost))
    }
}

/// `λ₀` tracked with exponential smoothing across calibration rounds,
/// clamped at zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaCalibrator {
    pub lambda0: f64,
    pub smoothing: f64,
    pub rounds: u64,
}

impl Default for LambdaCalibrator {
    fn default() -> Self {
        Self {
            lambda0: 1.0,
            smoothing: 0.1,
            rounds: 0,
        }
    }
}

impl LambdaCalibrator {
    pub fn update(&mut self, means: &RunningMeans) -> Result<f64> {
        let estimate = means.calibration()?.value().max(0.0);
        self.lambda0 = if self.rounds == 0 {
            estimate
        } else {
            (1.0 - self.smoothing) * self.lambda0 + self.smoothing * estimate
        };
        self.rounds += 1;
        Ok(self.lambda0)
    }
}

/// `KL(π(· | x, m_tar) ‖ π(· | x, m_recv))` for any message-conditioned
/// policy with the message-free input held inside `policy`.
pub fn info_gap<F>(policy: F, m_tar: Option<&[f64]>, m_recv: Option<&[f64]>) -> Result<f64>
where
    F: Fn(Option<&[f64]>) -> Result<Vec<f64>>,
{
    let p = policy(m_tar)?;
    let q = policy(m_recv)?;
    Ok(kl_divergence(&p, &q)?)
}

/// Total-variation companion of [`info_gap`], for Pinsker checks.
pub fn policy_tv<F>(policy: F, m_tar: Option<&[f64]>, m_recv: Option<&[f64]>) -> Result<f64>
where
    F: Fn(Option<&[f64]>) -> Result<Vec<f64>>,
{
    Ok(total_variation(&policy(m_tar)?, &policy(m_recv)?)?)
}

/// `{0, ⌈d_max/2⌉, d_max, 2·d_max}`.
pub fn horizon_grid(d_max: usize) -> [usize; 4] {
    [0, d_max.div_ceil(2), d_max, 2 * d_max]
}

/// `{0, 0.1, 0.3, 1, 3, 10} · λ₀`.
pub fn lambda_grid(lambda0: f64) -> [f64; 6] {
    [0.0, 0.1, 0.3, 1.0, 3.0, 10.0].map(|k| k * lambda0)
}
