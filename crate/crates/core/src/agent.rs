//! The per-agent pipeline: encoder, partner selection, trajectory
//! prediction, message construction, attention aggregation and the actor.
//!
//! All agents share one set of weights. Every network input ends with the
//! one-hot identity of the agent evaluating it.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use cdcma_nn::ops::{argmax, one_hot, softmax};
use cdcma_nn::{Activation, Archive, Matrix, Mlp, NnError, Parameterized};

use crate::env::N_ACTIONS;
use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Full,
    /// Request from every teammate every step.
    NoDcos,
    /// Horizon forced to zero: messages are the bare embedding.
    NoOtg,
    /// Mean pooling of received payloads.
    NoCama,
    /// Attention with uniform priors.
    PlainAttention,
    /// No requests at all.
    NoComm,
}

impl Variant {
    /// The module ablations compared against the full method.
    pub const ABLATIONS: [Variant; 5] = [
        Variant::Full,
        Variant::NoOtg,
        Variant::NoCama,
        Variant::NoDcos,
        Variant::PlainAttention,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoDcos => "no_dcos",
            Variant::NoOtg => "no_otg",
            Variant::NoCama => "no_cama",
            Variant::PlainAttention => "plain_attn",
            Variant::NoComm => "no_comm",
        }
    }

    pub fn pooling(self) -> Pooling {
        match self {
            Variant::NoCama => Pooling::Mean,
            Variant::PlainAttention => Pooling::Uniform,
            _ => Pooling::Prior,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = CoreError;

    /// Accepts variant names and the short ablation flags
    /// (`dcos`, `otg`, `cama`, `plainattn`, `nocomm`).
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "full" | "" => Ok(Variant::Full),
            "dcos" | "no_dcos" => Ok(Variant::NoDcos),
            "otg" | "no_otg" => Ok(Variant::NoOtg),
            "cama" | "no_cama" => Ok(Variant::NoCama),
            "plainattn" | "plain_attn" | "plain_attention" => Ok(Variant::PlainAttention),
            "nocomm" | "no_comm" => Ok(Variant::NoComm),
            other => Err(CoreError::config(format!("unknown ablation {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pooling {
    /// `α_j ∝ c̄_j · exp(β q·k_j)`.
    Prior,
    /// `α_j ∝ exp(β q·k_j)`.
    Uniform,
    /// Plain mean of the payloads, no projections.
    Mean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub n_agents: usize,
    pub obs_dim: usize,
    pub embed_dim: usize,
    pub hidden: usize,
    pub key_dim: usize,
    pub beta: f64,
    pub horizon: usize,
    pub d_max: usize,
    pub variant: Variant,
}

impl AgentConfig {
    pub fn new(n_agents: usize, obs_dim: usize) -> Self {
        let key_dim = 32;
        Self {
            n_agents,
            obs_dim,
            embed_dim: 64,
            hidden: 64,
            key_dim,
            beta: 1.0 / (key_dim as f64).sqrt(),
            horizon: 3,
            d_max: crate::channel::DEFAULT_D_MAX,
            variant: Variant::Full,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_agents < 2 || self.obs_dim == 0 || self.embed_dim == 0 || self.hidden == 0 || self.key_dim == 0 {
            return Err(CoreError::config("agent dimensions must be positive with at least two agents"));
        }
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(CoreError::config("attention beta must be positive"));
        }
        if self.horizon > 2 * self.d_max {
            return Err(CoreError::config(format!(
                "horizon {} exceeds the message window of 2·d_max = {}",
                self.horizon,
                2 * self.d_max
            )));
        }
        Ok(())
    }

    pub fn effective_horizon(&self) -> usize {
        if self.variant == Variant::NoOtg {
            0
        } else {
            self.horizon
        }
    }

    pub fn msg_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn encoder_in(&self) -> usize {
        self.obs_dim + self.embed_dim + self.n_agents
    }

    pub fn dcos_in(&self) -> usize {
        self.obs_dim + self.msg_dim() + 1 + self.n_agents
    }

    pub fn action_pred_in(&self) -> usize {
        self.obs_dim + self.msg_dim() + 2 * self.n_agents
    }

    pub fn residual_in(&self) -> usize {
        self.embed_dim + self.msg_dim() + 1 + self.n_agents * N_ACTIONS + self.obs_dim + self.n_agents
    }

    pub fn message_in(&self) -> usize {
        self.embed_dim + 2 * self.d_max * self.obs_dim
    }

    pub fn actor_in(&self) -> usize {
        self.embed_dim + self.msg_dim() + 1 + self.n_agents
    }
}

/// A received message as the agent sees it.
#[derive(Debug, Clone, Copy)]
pub struct MsgRef<'a> {
    pub sender: usize,
    pub payload: &'a [f64],
    pub prior: f64,
}

/// Projection weights for attention over received messages.
#[derive(Debug, Clone, PartialEq)]
pub struct Cama {
    key_dim: usize,
    embed_dim: usize,
    msg_dim: usize,
    /// `key_dim × embed_dim`
    pub wq: Vec<f64>,
    /// `key_dim × msg_dim`
    pub wk: Vec<f64>,
    /// `msg_dim × msg_dim`
    pub wv: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CamaGrads {
    pub wq: Vec<f64>,
    pub wk: Vec<f64>,
    pub wv: Vec<f64>,
}

impl CamaGrads {
    pub fn zeros_like(c: &Cama) -> Self {
        Self {
            wq: vec![0.0; c.wq.len()],
            wk: vec![0.0; c.wk.len()],
            wv: vec![0.0; c.wv.len()],
        }
    }
}

impl Parameterized for Cama {
    fn param_slices(&self) -> Vec<&[f64]> {
        vec![&self.wq, &self.wk, &self.wv]
    }
    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.wq, &mut self.wk, &mut self.wv]
    }
}

impl Parameterized for CamaGrads {
    fn param_slices(&self) -> Vec<&[f64]> {
        vec![&self.wq, &self.wk, &self.wv]
    }
    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.wq, &mut self.wk, &mut self.wv]
    }
}

fn matvec(w: &[f64], rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
    debug_assert_eq!(w.len(), rows * cols);
    (0..rows)
        .map(|r| w[r * cols..(r + 1) * cols].iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Everything needed to backpropagate through one aggregation.
#[derive(Debug, Clone, PartialEq)]
pub struct CamaTrace {
    pub pooling: Pooling,
    pub beta: f64,
    pub senders: Vec<usize>,
    pub alpha: Vec<f64>,
    pub output: Vec<f64>,
    pub present: bool,
    embedding: Vec<f64>,
    query: Vec<f64>,
    messages: Vec<Vec<f64>>,
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
}

/// `α = softmax(β·s + ln c̄)`, i.e. `α_j ∝ c̄_j·exp(β·s_j)`.
pub fn prior_weighted_softmax(scores: &[f64], priors: &[f64], beta: f64) -> Result<Vec<f64>> {
    if scores.len() != priors.len() || scores.is_empty() {
        return Err(CoreError::contract("attention needs one prior per score"));
    }
    if let Some(p) = priors.iter().find(|p| !(**p > 0.0) || !p.is_finite()) {
        return Err(CoreError::contract(format!("attention prior must be positive, got {p}")));
    }
    let logits: Vec<f64> = scores.iter().zip(priors).map(|(s, c)| beta * s + c.ln()).collect();
    Ok(softmax(&logits, 1.0)?)
}

impl Cama {
    pub fn zeros(key_dim: usize, embed_dim: usize, msg_dim: usize) -> Self {
        Self {
            key_dim,
            embed_dim,
            msg_dim,
            wq: vec![0.0; key_dim * embed_dim],
            wk: vec![0.0; key_dim * msg_dim],
            wv: vec![0.0; msg_dim * msg_dim],
        }
    }

    pub fn random<R: Rng + ?Sized>(key_dim: usize, embed_dim: usize, msg_dim: usize, rng: &mut R) -> Self {
        let mut c = Self::zeros(key_dim, embed_dim, msg_dim);
        let fill = |w: &mut Vec<f64>, fan_in: usize, rng: &mut R| {
            let lim = 1.0 / (fan_in as f64).sqrt();
            w.iter_mut().for_each(|v| *v = rng.gen_range(-lim..=lim));
        };
        fill(&mut c.wq, embed_dim, rng);
        fill(&mut c.wk, msg_dim, rng);
        fill(&mut c.wv, msg_dim, rng);
        c
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.key_dim, self.embed_dim, self.msg_dim)
    }

    pub fn aggregate(&self, e: &[f64], msgs: &[MsgRef<'_>], pooling: Pooling, beta: f64) -> Result<CamaTrace> {
        if e.len() != self.embed_dim {
            return Err(CoreError::contract("embedding width does not match attention"));
        }
        if msgs.iter().any(|m| m.payload.len() != self.msg_dim) {
            return Err(CoreError::contract("message width does not match attention"));
        }
        let mut trace = CamaTrace {
            pooling,
            beta,
            senders: msgs.iter().map(|m| m.sender).collect(),
            alpha: Vec::new(),
            output: vec![0.0; self.msg_dim],
            present: !msgs.is_empty(),
            embedding: e.to_vec(),
            query: Vec::new(),
            messages: msgs.iter().map(|m| m.payload.to_vec()).collect(),
            keys: Vec::new(),
            values: Vec::new(),
        };
        if msgs.is_empty() {
            return Ok(trace);
        }
        if pooling == Pooling::Mean {
            let w = 1.0 / msgs.len() as f64;
            trace.alpha = vec![w; msgs.len()];
            for m in msgs {
                for (o, v) in trace.output.iter_mut().zip(m.payload) {
                    *o += w * v;
                }
            }
            return Ok(trace);
        }
        let q = matvec(&self.wq, self.key_dim, self.embed_dim, e);
        let keys: Vec<Vec<f64>> = msgs
            .iter()
            .map(|m| matvec(&self.wk, self.key_dim, self.msg_dim, m.payload))
            .collect();
        let values: Vec<Vec<f64>> = msgs
            .iter()
            .map(|m| matvec(&self.wv, self.msg_dim, self.msg_dim, m.payload))
            .collect();
        let scores: Vec<f64> = keys.iter().map(|k| dot(&q, k)).collect();
        let priors: Vec<f64> = match pooling {
            Pooling::Prior => msgs.iter().map(|m| m.prior).collect(),
            _ => vec![1.0; msgs.len()],
        };
        let alpha = prior_weighted_softmax(&scores, &priors, beta)?;
        for (a, v) in alpha.iter().zip(&values) {
            for (o, x) in trace.output.iter_mut().zip(v) {
                *o += a * x;
            }
        }
        trace.alpha = alpha;
        trace.query = q;
        trace.keys = keys;
        trace.values = values;
        Ok(trace)
    }

    /// Accumulates weight gradients into `grads` and returns `d/d e`.
    pub fn backward(&self, trace: &CamaTrace, d_out: &[f64], grads: &mut CamaGrads) -> Vec<f64> {
        let mut de = vec![0.0; self.embed_dim];
        if !trace.present || trace.pooling == Pooling::Mean {
            return de;
        }
        let n = trace.alpha.len();
        let (dk, dm) = (self.key_dim, self.msg_dim);
        // output = Σ α_j v_j
        let d_alpha: Vec<f64> = trace.values.iter().map(|v| dot(d_out, v)).collect();
        let mean = dot(&trace.alpha, &d_alpha);
        let d_score: Vec<f64> = (0..n)
            .map(|j| trace.beta * trace.alpha[j] * (d_alpha[j] - mean))
            .collect();
        let mut dq = vec![0.0; dk];
        for j in 0..n {
            let m = &trace.messages[j];
            // v_j = Wv m_j
            for r in 0..dm {
                let g = trace.alpha[j] * d_out[r];
                if g != 0.0 {
                    let row = &mut grads.wv[r * dm..(r + 1) * dm];
                    row.iter_mut().zip(m).for_each(|(w, x)| *w += g * x);
                }
            }
            // score_j = q · k_j, k_j = Wk m_j
            for r in 0..dk {
                dq[r] += d_score[j] * trace.keys[j][r];
                let g = d_score[j] * trace.query[r];
                if g != 0.0 {
                    let row = &mut grads.wk[r * dm..(r + 1) * dm];
                    row.iter_mut().zip(m).for_each(|(w, x)| *w += g * x);
                }
            }
        }
        // q = Wq e
        let de_dim = self.embed_dim;
        for r in 0..dk {
            let row = &mut grads.wq[r * de_dim..(r + 1) * de_dim];
            row.iter_mut().zip(&trace.embedding).for_each(|(w, x)| *w += dq[r] * x);
            for (c, d) in de.iter_mut().enumerate() {
                *d += self.wq[r * de_dim + c] * dq[r];
            }
        }
        de
    }
}

/// Shared weights of every agent-side network.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentNets {
    pub config: AgentConfig,
    pub encoder: Mlp,
    pub dcos: Mlp,
    pub action_pred: Mlp,
    pub residual: Mlp,
    pub message: Mlp,
    pub cama: Cama,
    pub actor: Mlp,
}

fn mlp<R: Rng + ?Sized>(sizes: &[usize], output: Activation, rng: &mut R) -> Result<Mlp> {
    Ok(Mlp::random(sizes, Activation::Relu, output, rng)?)
}

impl AgentNets {
    pub fn new<R: Rng + ?Sized>(config: AgentConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let h = c.hidden;
        let n = c.n_agents;
        Ok(Self {
            encoder: mlp(&[c.encoder_in(), h, c.embed_dim], Activation::Tanh, rng)?,
            dcos: mlp(&[c.dcos_in(), h, n], Activation::Identity, rng)?,
            action_pred: mlp(&[c.action_pred_in(), h, N_ACTIONS], Activation::Identity, rng)?,
            residual: mlp(&[c.residual_in(), h, c.obs_dim], Activation::Identity, rng)?,
            message: mlp(&[c.message_in(), h, c.msg_dim()], Activation::Identity, rng)?,
            cama: Cama::random(c.key_dim, c.embed_dim, c.msg_dim(), rng),
            actor: mlp(&[c.actor_in(), h, h, N_ACTIONS], Activation::Identity, rng)?,
            config,
        })
    }

    fn id(&self, i: usize) -> Vec<f64> {
        one_hot(i, self.config.n_agents)
    }

    fn check_agent(&self, i: usize) -> Result<()> {
        if i >= self.config.n_agents {
            return Err(CoreError::contract(format!("agent {i} out of range")));
        }
        Ok(())
    }

    fn check_obs(&self, obs: &[f64]) -> Result<()> {
        if obs.len() != self.config.obs_dim {
            return Err(CoreError::contract(format!(
                "observation has {} entries, expected {}",
                obs.len(),
                self.config.obs_dim
            )));
        }
        Ok(())
    }

    pub fn encoder_row(&self, i: usize, obs: &[f64], prev: &[f64]) -> Result<Vec<f64>> {
        self.check_agent(i)?;
        self.check_obs(obs)?;
        if prev.len() != self.config.embed_dim {
            return Err(CoreError::contract("previous embedding has the wrong width"));
        }
        Ok([obs, prev, &self.id(i)].concat())
    }

    /// `e_{i,t}` from the current observation and the previous embedding
    /// (zeros at the first step).
    pub fn encode(&self, i: usize, obs: &[f64], prev: &[f64]) -> Result<Vec<f64>> {
        Ok(self.encoder.predict_one(&self.encoder_row(i, obs, prev)?)?)
    }

    fn pooled(&self, msgs: &[MsgRef<'_>]) -> (Vec<f64>, f64) {
        let mut pooled = vec![0.0; self.config.msg_dim()];
        if !msgs.is_empty() {
            let w = 1.0 / msgs.len() as f64;
            for m in msgs {
                for (p, v) in pooled.iter_mut().zip(m.payload) {
                    *p += w * v;
                }
            }
        }
        let count = msgs.len() as f64 / (self.config.n_agents - 1) as f64;
        (pooled, count)
    }

    pub fn dcos_row(&self, i: usize, obs: &[f64], msgs: &[MsgRef<'_>]) -> Result<Vec<f64>> {
        self.check_agent(i)?;
        self.check_obs(obs)?;
        let (pooled, count) = self.pooled(msgs);
        Ok([obs, &pooled, &[count], &self.id(i)].concat())
    }

    /// Predicted scores for requesting from each agent; entry `i` is 0.
    pub fn dcos_scores(&self, i: usize, obs: &[f64], msgs: &[MsgRef<'_>]) -> Result<Vec<f64>> {
        let mut s = self.dcos.predict_one(&self.dcos_row(i, obs, msgs)?)?;
        s[i] = 0.0;
        Ok(s)
    }

    pub fn action_pred_row(&self, i: usize, obs: &[f64], sender: usize, payload: &[f64]) -> Result<Vec<f64>> {
        self.check_agent(i)?;
        self.check_agent(sender)?;
        self.check_obs(obs)?;
        Ok([obs, payload, &self.id(sender), &self.id(i)].concat())
    }

    /// One distribution over the sender's next action per available message.
    pub fn predict_actions(&self, i: usize, obs: &[f64], msgs: &[MsgRef<'_>]) -> Result<Vec<Vec<f64>>> {
        if msgs.is_empty() {
            return Ok(Vec::new());
        }
        let rows = msgs
            .iter()
            .map(|m| self.action_pred_row(i, obs, m.sender, m.payload))
            .collect::<Result<Vec<_>>>()?;
        let logits = self.action_pred.predict(&Matrix::from_rows(&rows)?)?;
        logits
            .iter_rows()
            .map(|z| Ok(softmax(z, 1.0)?))
            .collect()
    }

    /// Flattened `N × 5` block of predicted teammate actions; zeros for
    /// teammates without a message.
    pub fn flatten_predictions(&self, msgs: &[MsgRef<'_>], preds: &[Vec<f64>]) -> Vec<f64> {
        let mut flat = vec![0.0; self.config.n_agents * N_ACTIONS];
        for (m, p) in msgs.iter().zip(preds) {
            flat[m.sender * N_ACTIONS..(m.sender + 1) * N_ACTIONS].copy_from_slice(p);
        }
        flat
    }

    pub fn residual_row(
        &self,
        i: usize,
        e: &[f64],
        current: &[f64],
        msgs: &[MsgRef<'_>],
        predicted_actions: &[f64],
    ) -> Result<Vec<f64>> {
        self.check_agent(i)?;
        self.check_obs(current)?;
        let (pooled, count) = self.pooled(msgs);
        Ok([e, &pooled, &[count], predicted_actions, current, &self.id(i)].concat())
    }

    /// `ô_{t+k} = ô_{t+k−1} + f^o(e, messages, â, ô_{t+k−1})` for `k = 1..=h`,
    /// starting from `ô_t = o_t`.
    pub fn rollout(
        &self,
        i: usize,
        e: &[f64],
        obs: &[f64],
        msgs: &[MsgRef<'_>],
        predicted_actions: &[f64],
        h: usize,
    ) -> Result<Vec<Vec<f64>>> {
        let mut traj = Vec::with_capacity(h);
        let mut cur = obs.to_vec();
        for _ in 0..h {
            let delta = self
                .residual
                .predict_one(&self.residual_row(i, e, &cur, msgs, predicted_actions)?)?;
            cur = cur.iter().zip(&delta).map(|(o, d)| o + d).collect();
            traj.push(cur.clone());
        }
        Ok(traj)
    }

    /// Outgoing payload: the embedding itself when there is no predicted
    /// trajectory, otherwise the embedding plus an encoding of the
    /// trajectory zero-padded to `2·d_max` steps.
    pub fn build_message(&self, e: &[f64], traj: &[Vec<f64>]) -> Result<Vec<f64>> {
        if e.len() != self.config.embed_dim {
            return Err(CoreError::contract("embedding has the wrong width"));
        }
        if traj.is_empty() {
            return Ok(e.to_vec());
        }
        let window = 2 * self.config.d_max;
        if traj.len() > window {
            return Err(CoreError::contract("trajectory longer than the message window"));
        }
        let mut row = Vec::with_capacity(self.config.message_in());
        row.extend_from_slice(e);
        for step in traj {
            self.check_obs(step)?;
            row.extend_from_slice(step);
        }
        row.resize(self.config.message_in(), 0.0);
        let enc = self.message.predict_one(&row)?;
        Ok(e.iter().zip(&enc).map(|(a, b)| a + b).collect())
    }

    pub fn aggregate(&self, e: &[f64], msgs: &[MsgRef<'_>]) -> Result<CamaTrace> {
        self.cama
            .aggregate(e, msgs, self.config.variant.pooling(), self.config.beta)
    }

    pub fn actor_row(&self, i: usize, e: &[f64], agg: &[f64], present: bool) -> Result<Vec<f64>> {
        self.check_agent(i)?;
        Ok([e, agg, &[if present { 1.0 } else { 0.0 }], &self.id(i)].concat())
    }

    pub fn policy(&self, i: usize, e: &[f64], trace: &CamaTrace) -> Result<Vec<f64>> {
        let z = self
            .actor
            .predict_one(&self.actor_row(i, e, &trace.output, trace.present)?)?;
        Ok(softmax(&z, 1.0)?)
    }

    pub fn save(&self, archive: &mut Archive, prefix: &str) {
        archive.insert_mlp(&format!("{prefix}.encoder"), &self.encoder);
        archive.insert_mlp(&format!("{prefix}.dcos"), &self.dcos);
        archive.insert_mlp(&format!("{prefix}.action_pred"), &self.action_pred);
        archive.insert_mlp(&format!("{prefix}.residual"), &self.residual);
        archive.insert_mlp(&format!("{prefix}.message"), &self.message);
        archive.insert_mlp(&format!("{prefix}.actor"), &self.actor);
        archive.insert_vec(format!("{prefix}.cama.wq"), &self.cama.wq);
        archive.insert_vec(format!("{prefix}.cama.wk"), &self.cama.wk);
        archive.insert_vec(format!("{prefix}.cama.wv"), &self.cama.wv);
    }

    /// Loads weights saved by [`AgentNets::save`] into a network built from
    /// `config`, checking every shape.
    pub fn load(config: AgentConfig, archive: &Archive, prefix: &str) -> Result<Self> {
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let mut nets = Self::new(config, &mut rng)?;
        let load_into = |target: &mut Mlp, name: &str| -> Result<()> {
            let loaded = archive.load_mlp(&format!("{prefix}.{name}"))?;
            let same = loaded.layers().len() == target.layers().len()
                && loaded.layers().iter().zip(target.layers()).all(|(a, b)| {
                    a.in_dim() == b.in_dim()
                        && a.out_dim() == b.out_dim()
                        && a.activation() == b.activation()
                        && a.has_bias() == b.has_bias()
                });
            if !same {
                return Err(CoreError::Nn(NnError::Archive(format!("{prefix}.{name}: shape mismatch"))));
            }
            *target = loaded;
            Ok(())
        };
        load_into(&mut nets.encoder, "encoder")?;
        load_into(&mut nets.dcos, "dcos")?;
        load_into(&mut nets.action_pred, "action_pred")?;
        load_into(&mut nets.residual, "residual")?;
        load_into(&mut nets.message, "message")?;
        load_into(&mut nets.actor, "actor")?;
        let c = &mut nets.cama;
        c.wq = archive.vec(&format!("{prefix}.cama.wq"), Some(c.wq.len()))?;
        c.wk = archive.vec(&format!("{prefix}.cama.wk"), Some(c.wk.len()))?;
        c.wv = archive.vec(&format!("{prefix}.cama.wv"), Some(c.wv.len()))?;
        Ok(nets)
    }
}

/// Samples from `probs`, or takes the argmax when `greedy`.
pub fn choose_action<R: Rng + ?Sized>(probs: &[f64], greedy: bool, rng: &mut R) -> usize {
    if greedy {
        return argmax(probs).unwrap_or(0);
    }
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (k, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    probs.len() - 1
}

/// Request mask `F_j = 1 ⟺ ĉ_j > 0`, never including the agent itself.
pub fn request_mask(scores: &[f64], me: usize) -> Vec<bool> {
    scores.iter().enumerate().map(|(j, &c)| j != me && c > 0.0).collect()
}
