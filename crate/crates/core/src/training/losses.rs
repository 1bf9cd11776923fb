//! Training losses with hand-derived gradients.
//!
//! Every function here is pure: it reads networks and a batch and returns a
//! scalar loss with gradients for exactly one parameter group. Targets that
//! come from target networks or from other networks are computed by separate
//! functions and passed in as constants.

use rand::Rng;

use cdcma_nn::ops::{kl_divergence, log_softmax, one_hot, softmax};
use cdcma_nn::{Matrix, Mlp, MlpGrads};

use crate::agent::{choose_action, AgentNets, CamaGrads, CamaTrace, MsgRef};
use crate::cgdc::{GainLayout, PairContext};
use crate::env::N_ACTIONS;
use crate::error::{CoreError, Result};

use super::record::{Received, TransitionRecord};

pub type Batch<'a> = [&'a TransitionRecord];

/// Width of the full critic input:
/// `[o_1 … o_N | onehot(a_1) … onehot(a_N) | m̃_i | presence | onehot(i)]`.
pub fn full_input_dim(n_agents: usize, obs_dim: usize, msg_dim: usize) -> usize {
    n_agents * obs_dim + n_agents * N_ACTIONS + msg_dim + 1 + n_agents
}

pub fn full_critic_row(obs: &[Vec<f64>], actions: &[usize], agg: &[f64], present: bool, i: usize) -> Vec<f64> {
    let n = obs.len();
    let mut row = Vec::with_capacity(full_input_dim(n, obs[0].len(), agg.len()));
    for o in obs {
        row.extend_from_slice(o);
    }
    for &a in actions {
        row.extend(one_hot(a, N_ACTIONS));
    }
    row.extend_from_slice(agg);
    row.push(if present { 1.0 } else { 0.0 });
    row.extend(one_hot(i, n));
    row
}

pub fn msg_refs(list: &[Received]) -> Vec<MsgRef<'_>> {
    list.iter()
        .map(|r| MsgRef {
            sender: r.sender,
            payload: &r.payload,
            prior: r.prior,
        })
        .collect()
}

fn slot(list: &[Received], sender: usize) -> Option<&[f64]> {
    list.iter().find(|r| r.sender == sender).map(|r| r.payload.as_slice())
}

fn check(loss: f64, what: &str) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(CoreError::Numeric(format!("{what} loss is not finite")))
    }
}

/// An agent's embedding and aggregate for one record.
#[derive(Debug, Clone)]
pub struct AgentView {
    pub embedding: Vec<f64>,
    pub trace: CamaTrace,
}

pub fn views(nets: &AgentNets, obs: &[Vec<f64>], prev: &[Vec<f64>], mail: &[Vec<Received>]) -> Result<Vec<AgentView>> {
    (0..obs.len())
        .map(|i| {
            let embedding = nets.encode(i, &obs[i], &prev[i])?;
            let trace = nets.aggregate(&embedding, &msg_refs(&mail[i]))?;
            Ok(AgentView { embedding, trace })
        })
        .collect()
}

/// Joint next actions `a′ ~ π⁻(e′, m̃′)` for one record, sampled from the
/// target networks.
pub fn next_actions<R: Rng + ?Sized>(target: &AgentNets, rec: &TransitionRecord, rng: &mut R) -> Result<Vec<usize>> {
    let v = views(target, &rec.next_obs, &rec.embeddings, &rec.next_consumed)?;
    v.iter()
        .enumerate()
        .map(|(k, view)| Ok(choose_action(&target.policy(k, &view.embedding, &view.trace)?, false, rng)))
        .collect()
}

/// Full critic inputs at the stored actions, one row per (record, agent),
/// with the aggregate from the current online encoder and attention.
pub fn full_critic_inputs(nets: &AgentNets, batch: &Batch<'_>) -> Result<Matrix> {
    let mut rows = Vec::new();
    for rec in batch {
        let v = views(nets, &rec.obs, &rec.prev_embedding, &rec.consumed)?;
        for (i, view) in v.iter().enumerate() {
            rows.push(full_critic_row(&rec.obs, &rec.actions, &view.trace.output, view.trace.present, i));
        }
    }
    Ok(Matrix::from_rows(&rows)?)
}

/// `y_i = r_i + γ(1 − done)·Q⁻(o′, a′, m̃′_i)` with `m̃′` from the target
/// encoder and attention.
pub fn full_critic_targets(
    target: &AgentNets,
    target_critic: &Mlp,
    batch: &Batch<'_>,
    next: &[Vec<usize>],
    gamma: f64,
) -> Result<Vec<f64>> {
    let mut y = Vec::new();
    for (rec, a_next) in batch.iter().zip(next) {
        let n = rec.n_agents();
        if gamma == 0.0 {
            y.extend_from_slice(&rec.rewards);
            continue;
        }
        let v = views(target, &rec.next_obs, &rec.embeddings, &rec.next_consumed)?;
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| full_critic_row(&rec.next_obs, a_next, &v[i].trace.output, v[i].trace.present, i))
            .collect();
        let q = target_critic.predict(&Matrix::from_rows(&rows)?)?;
        y.extend((0..n).map(|i| rec.rewards[i] + gamma * q.get(i, 0)));
    }
    Ok(y)
}

/// `scale · Σ_rows (Q(x) − y)²` and its gradient.
pub fn squared_td_loss(critic: &Mlp, x: &Matrix, y: &[f64], scale: f64) -> Result<(f64, MlpGrads)> {
    if x.rows() != y.len() || x.rows() == 0 {
        return Err(CoreError::contract("TD loss needs one target per input row"));
    }
    let (q, cache) = critic.forward(x)?;
    let mut grad = Matrix::zeros(x.rows(), 1);
    let mut loss = 0.0;
    for r in 0..x.rows() {
        let d = q.get(r, 0) - y[r];
        loss += d * d;
        grad.set(r, 0, 2.0 * scale * d);
    }
    let loss = check(scale * loss, "critic")?;
    let (g, _) = critic.backward(&cache, &grad)?;
    Ok((loss, g))
}

/// Mean squared TD error over records and agents.
pub fn full_critic_loss(critic: &Mlp, x: &Matrix, y: &[f64]) -> Result<(f64, MlpGrads)> {
    squared_td_loss(critic, x, y, 1.0 / x.rows().max(1) as f64)
}

/// Gain critic rows: for each record, receiver `i` and sender `j ≠ i`, the
/// present-message row followed by the absent-message row, both at the
/// stored actions.
pub fn gain_critic_inputs(layout: &GainLayout, batch: &Batch<'_>) -> Result<Matrix> {
    let n = layout.n_agents;
    let mut x = Matrix::zeros(batch.len() * n * (n - 1) * 2, layout.input_dim());
    let mut r = 0;
    for rec in batch {
        for i in 0..n {
            for j in (0..n).filter(|&j| j != i) {
                let ctx = PairContext {
                    receiver: i,
                    sender: j,
                    obs: &rec.obs,
                    actions: &rec.actions,
                };
                layout.encode_into(&ctx, rec.actions[i], slot(&rec.consumed[i], j), x.row_mut(r))?;
                layout.encode_into(&ctx, rec.actions[i], None, x.row_mut(r + 1))?;
                r += 2;
            }
        }
    }
    Ok(x)
}

/// `y^pres` bootstraps to the next received message on the pair, `y^abs` to
/// the null message. Same row order as [`gain_critic_inputs`].
pub fn gain_critic_targets(
    target_gain: &Mlp,
    layout: &GainLayout,
    batch: &Batch<'_>,
    next: &[Vec<usize>],
    gamma: f64,
) -> Result<Vec<f64>> {
    let n = layout.n_agents;
    let pairs = n * (n - 1);
    let mut y = Vec::with_capacity(batch.len() * pairs * 2);
    for (rec, a_next) in batch.iter().zip(next) {
        if gamma == 0.0 {
            for i in 0..n {
                for _ in 0..(n - 1) * 2 {
                    y.push(rec.rewards[i]);
                }
            }
            continue;
        }
        let mut x = Matrix::zeros(pairs * 2, layout.input_dim());
        let mut r = 0;
        for i in 0..n {
            for j in (0..n).filter(|&j| j != i) {
                let ctx = PairContext {
                    receiver: i,
                    sender: j,
                    obs: &rec.next_obs,
                    actions: a_next,
                };
                layout.encode_into(&ctx, a_next[i], slot(&rec.next_consumed[i], j), x.row_mut(r))?;
                layout.encode_into(&ctx, a_next[i], None, x.row_mut(r + 1))?;
                r += 2;
            }
        }
        let q = target_gain.predict(&x)?;
        let mut r = 0;
        for i in 0..n {
            for _ in 0..(n - 1) * 2 {
                y.push(rec.rewards[i] + gamma * q.get(r, 0));
                r += 1;
            }
        }
    }
    Ok(y)
}

/// Sum over ordered pairs of both squared TD errors, averaged over records.
pub fn gain_critic_loss(critic: &Mlp, x: &Matrix, y: &[f64], batch_len: usize) -> Result<(f64, MlpGrads)> {
    squared_td_loss(critic, x, y, 1.0 / batch_len.max(1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyGradient {
    /// Exact expectation over all actions: `∇ Σ_a π(a)·Q(a)`.
    Expected,
    /// Score function at the stored action: `∇ log π(a)·Q(a)`.
    Sampled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGrads {
    pub encoder: MlpGrads,
    pub cama: CamaGrads,
    pub actor: MlpGrads,
}

/// Full critic values for every action of agent `i` with the other agents'
/// stored actions held fixed; one row of five per (record, agent).
pub fn actor_action_values(nets: &AgentNets, critic: &Mlp, batch: &Batch<'_>) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    for rec in batch {
        let v = views(nets, &rec.obs, &rec.prev_embedding, &rec.consumed)?;
        for (i, view) in v.iter().enumerate() {
            let mut acts = rec.actions.clone();
            for a in 0..N_ACTIONS {
                acts[i] = a;
                rows.push(full_critic_row(&rec.obs, &acts, &view.trace.output, view.trace.present, i));
            }
        }
    }
    let q = critic.predict(&Matrix::from_rows(&rows)?)?.into_vec();
    Ok(q.chunks(N_ACTIONS).map(|c| c.to_vec()).collect())
}

fn policy_row_loss(
    logits: &[f64],
    q: &[f64],
    taken: usize,
    mode: PolicyGradient,
    entropy: f64,
) -> Result<(f64, Vec<f64>)> {
    let logp = log_softmax(logits, 1.0)?;
    let p: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
    let h: f64 = -p.iter().zip(&logp).map(|(a, b)| a * b).sum::<f64>();
    // dH/dz_a = −π_a (log π_a + H)
    let dh: Vec<f64> = p.iter().zip(&logp).map(|(pa, la)| -pa * (la + h)).collect();
    let (obj, dobj): (f64, Vec<f64>) = match mode {
        PolicyGradient::Expected => {
            let v: f64 = p.iter().zip(q).map(|(a, b)| a * b).sum();
            (v, p.iter().zip(q).map(|(pa, qa)| pa * (qa - v)).collect())
        }
        PolicyGradient::Sampled => (
            logp[taken] * q[taken],
            (0..p.len())
                .map(|a| (if a == taken { 1.0 } else { 0.0 } - p[a]) * q[taken])
                .collect(),
        ),
    };
    let loss = -(obj + entropy * h);
    let grad = dobj.iter().zip(&dh).map(|(o, e)| -(o + entropy * e)).collect();
    Ok((loss, grad))
}

/// Policy loss averaged over records and agents, backpropagated through the
/// actor, the attention weights and the encoder. `q` holds per-action values
/// treated as constants.
pub fn actor_loss(
    nets: &AgentNets,
    batch: &Batch<'_>,
    q: &[Vec<f64>],
    mode: PolicyGradient,
    entropy: f64,
) -> Result<(f64, PolicyGrads)> {
    let n = nets.config.n_agents;
    let rows = batch.len() * n;
    if q.len() != rows {
        return Err(CoreError::contract("one action-value row per record and agent"));
    }
    let mut enc_rows = Vec::with_capacity(rows);
    for rec in batch {
        for i in 0..n {
            enc_rows.push(nets.encoder_row(i, &rec.obs[i], &rec.prev_embedding[i])?);
        }
    }
    let (emb, enc_cache) = nets.encoder.forward(&Matrix::from_rows(&enc_rows)?)?;
    let mut traces = Vec::with_capacity(rows);
    let mut actor_rows = Vec::with_capacity(rows);
    for (b, rec) in batch.iter().enumerate() {
        for i in 0..n {
            let e = emb.row(b * n + i);
            let t = nets.aggregate(e, &msg_refs(&rec.consumed[i]))?;
            actor_rows.push(nets.actor_row(i, e, &t.output, t.present)?);
            traces.push(t);
        }
    }
    let (logits, actor_cache) = nets.actor.forward(&Matrix::from_rows(&actor_rows)?)?;
    let scale = 1.0 / rows as f64;
    let mut dlogits = Matrix::zeros(rows, N_ACTIONS);
    let mut loss = 0.0;
    for (b, rec) in batch.iter().enumerate() {
        for i in 0..n {
            let r = b * n + i;
            let (l, g) = policy_row_loss(logits.row(r), &q[r], rec.actions[i], mode, entropy)?;
            loss += l;
            dlogits.row_mut(r).iter_mut().zip(&g).for_each(|(d, v)| *d = scale * v);
        }
    }
    let loss = check(scale * loss, "actor")?;
    let (actor_g, dinput) = nets.actor.backward(&actor_cache, &dlogits)?;
    let ed = nets.config.embed_dim;
    let md = nets.config.msg_dim();
    let mut cama_g = CamaGrads::zeros_like(&nets.cama);
    let mut demb = Matrix::zeros(rows, ed);
    for r in 0..rows {
        let d = dinput.row(r);
        let de_cama = nets.cama.backward(&traces[r], &d[ed..ed + md], &mut cama_g);
        for (k, v) in demb.row_mut(r).iter_mut().enumerate() {
            *v = d[k] + de_cama[k];
        }
    }
    let (enc_g, _) = nets.encoder.backward(&enc_cache, &demb)?;
    Ok((
        loss,
        PolicyGrads {
            encoder: enc_g,
            cama: cama_g,
            actor: actor_g,
        },
    ))
}

/// Residual inputs and targets `o′ − o` for the one-step observation model,
/// conditioned on the current embedding, heard messages and predicted
/// teammate actions (all treated as constants).
pub fn residual_batch(nets: &AgentNets, batch: &Batch<'_>) -> Result<(Matrix, Matrix)> {
    let n = nets.config.n_agents;
    let mut xs = Vec::with_capacity(batch.len() * n);
    let mut ys = Vec::with_capacity(batch.len() * n);
    for rec in batch {
        for i in 0..n {
            let e = nets.encode(i, &rec.obs[i], &rec.prev_embedding[i])?;
            let msgs = msg_refs(&rec.heard[i]);
            let preds = nets.predict_actions(i, &rec.obs[i], &msgs)?;
            let flat = nets.flatten_predictions(&msgs, &preds);
            xs.push(nets.residual_row(i, &e, &rec.obs[i], &msgs, &flat)?);
            ys.push(rec.next_obs[i].iter().zip(&rec.obs[i]).map(|(a, b)| a - b).collect::<Vec<f64>>());
        }
    }
    Ok((Matrix::from_rows(&xs)?, Matrix::from_rows(&ys)?))
}

/// `mean_rows ‖f^o(x) − Δo‖²`.
pub fn residual_loss(residual: &Mlp, x: &Matrix, target: &Matrix) -> Result<(f64, MlpGrads)> {
    let (out, cache) = residual.forward(x)?;
    if out.rows() != target.rows() || out.cols() != target.cols() {
        return Err(CoreError::contract("residual targets have the wrong shape"));
    }
    let scale = 1.0 / x.rows().max(1) as f64;
    let mut grad = Matrix::zeros(out.rows(), out.cols());
    let mut loss = 0.0;
    for ((g, o), t) in grad.as_mut_slice().iter_mut().zip(out.as_slice()).zip(target.as_slice()) {
        let d = o - t;
        loss += d * d;
        *g = 2.0 * scale * d;
    }
    let loss = check(scale * loss, "residual")?;
    Ok((loss, residual.backward(&cache, &grad)?.0))
}

/// Rows `(o_i, m_ij, j, i)` for every heard message with the realized
/// teammate action as label.
pub fn action_pred_batch(nets: &AgentNets, batch: &Batch<'_>) -> Result<(Option<Matrix>, Vec<usize>)> {
    let mut xs = Vec::new();
    let mut labels = Vec::new();
    for rec in batch {
        for i in 0..rec.n_agents() {
            for m in &rec.heard[i] {
                xs.push(nets.action_pred_row(i, &rec.obs[i], m.sender, &m.payload)?);
                labels.push(rec.actions[m.sender]);
            }
        }
    }
    if xs.is_empty() {
        return Ok((None, labels));
    }
    Ok((Some(Matrix::from_rows(&xs)?), labels))
}

/// Cross-entropy summed over available senders, averaged over
/// `records × agents` (`per`).
pub fn action_pred_loss(head: &Mlp, x: Option<&Matrix>, labels: &[usize], per: usize) -> Result<(f64, MlpGrads)> {
    let Some(x) = x else {
        return Ok((0.0, MlpGrads::zeros_like(head)));
    };
    if x.rows() != labels.len() {
        return Err(CoreError::contract("one label per action-prediction row"));
    }
    let (logits, cache) = head.forward(x)?;
    let scale = 1.0 / per.max(1) as f64;
    let mut grad = Matrix::zeros(x.rows(), N_ACTIONS);
    let mut loss = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        let lp = log_softmax(logits.row(r), 1.0)?;
        loss -= lp[label];
        for (a, g) in grad.row_mut(r).iter_mut().enumerate() {
            *g = scale * (lp[a].exp() - if a == label { 1.0 } else { 0.0 });
        }
    }
    let loss = check(scale * loss, "action prediction")?;
    Ok((loss, head.backward(&cache, &grad)?.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairTarget {
    pub sender: usize,
    pub gain: f64,
    pub cost: f64,
    pub target: f64,
}

/// `c_ij = V̂g_ij − λ·Vc_ij` for every consumed message, per record and
/// receiver. Pairs without a message carry no target.
pub fn build_cgdc_targets(
    gain: &Mlp,
    layout: &GainLayout,
    batch: &Batch<'_>,
    lambda: f64,
    eta: f64,
) -> Result<Vec<Vec<Vec<PairTarget>>>> {
    if !(lambda >= 0.0) {
        return Err(CoreError::contract("lambda must be non-negative"));
    }
    // per pair: 5 rows with m_r, 5 rows with m_tar, 1 null row at a_i
    let per_pair = 2 * N_ACTIONS + 1;
    let mut pairs = Vec::new();
    for (b, rec) in batch.iter().enumerate() {
        for i in 0..rec.n_agents() {
            for m in &rec.consumed[i] {
                pairs.push((b, i, m));
            }
        }
    }
    let mut out: Vec<Vec<Vec<PairTarget>>> = batch.iter().map(|r| vec![Vec::new(); r.n_agents()]).collect();
    if pairs.is_empty() {
        return Ok(out);
    }
    let mut x = Matrix::zeros(pairs.len() * per_pair, layout.input_dim());
    for (p, &(b, i, m)) in pairs.iter().enumerate() {
        let rec = batch[b];
        let ctx = PairContext {
            receiver: i,
            sender: m.sender,
            obs: &rec.obs,
            actions: &rec.actions,
        };
        let base = p * per_pair;
        for a in 0..N_ACTIONS {
            layout.encode_into(&ctx, a, Some(&m.payload), x.row_mut(base + a))?;
            layout.encode_into(&ctx, a, Some(&rec.embeddings[m.sender]), x.row_mut(base + N_ACTIONS + a))?;
        }
        layout.encode_into(&ctx, rec.actions[i], None, x.row_mut(base + 2 * N_ACTIONS))?;
    }
    let q = gain.predict(&x)?.into_vec();
    if q.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::Numeric("gain critic produced a non-finite value".into()));
    }
    for (p, &(b, i, m)) in pairs.iter().enumerate() {
        let qs = &q[p * per_pair..(p + 1) * per_pair];
        let q_recv = &qs[..N_ACTIONS];
        let q_tar = &qs[N_ACTIONS..2 * N_ACTIONS];
        let gain_value = q_recv[batch[b].actions[i]] - qs[2 * N_ACTIONS];
        let cost = kl_divergence(&softmax(q_tar, eta)?, &softmax(q_recv, eta)?)?;
        if !(cost >= 0.0) {
            return Err(CoreError::Numeric("negative delay cost".into()));
        }
        out[b][i].push(PairTarget {
            sender: m.sender,
            gain: gain_value,
            cost,
            target: gain_value - lambda * cost,
        });
    }
    Ok(out)
}

/// DCOS inputs, one row per (record, receiver), from heard messages.
pub fn dcos_inputs(nets: &AgentNets, batch: &Batch<'_>) -> Result<Matrix> {
    let mut xs = Vec::new();
    for rec in batch {
        for i in 0..rec.n_agents() {
            xs.push(nets.dcos_row(i, &rec.obs[i], &msg_refs(&rec.heard[i]))?);
        }
    }
    Ok(Matrix::from_rows(&xs)?)
}

/// `Σ_i Σ_{j with a target} (ĉ_ij − c_ij)²`, averaged over records.
pub fn dcos_loss(dcos: &Mlp, x: &Matrix, targets: &[Vec<Vec<PairTarget>>]) -> Result<(f64, MlpGrads)> {
    let (out, cache) = dcos.forward(x)?;
    let scale = 1.0 / targets.len().max(1) as f64;
    let mut grad = Matrix::zeros(out.rows(), out.cols());
    let mut loss = 0.0;
    let mut r = 0;
    for per_record in targets {
        for (i, list) in per_record.iter().enumerate() {
            for t in list {
                if t.sender == i || t.sender >= out.cols() {
                    return Err(CoreError::contract("target for an invalid pair"));
                }
                let d = out.get(r, t.sender) - t.target;
                loss += d * d;
                grad.set(r, t.sender, 2.0 * scale * d);
            }
            r += 1;
        }
    }
    if r != out.rows() {
        return Err(CoreError::contract("one target list per DCOS input row"));
    }
    let loss = check(scale * loss, "partner selection")?;
    Ok((loss, dcos.backward(&cache, &grad)?.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entropy_only_gradient_vanishes_at_uniform() {
        let (_, g) = policy_row_loss(&[0.0; 5], &[0.0; 5], 0, PolicyGradient::Expected, 0.3).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn expected_gradient_pushes_toward_best_action() {
        let (_, g) = policy_row_loss(&[0.0; 5], &[0.0, 0.0, 1.0, 0.0, 0.0], 0, PolicyGradient::Expected, 0.0).unwrap();
        assert!(g[2] < 0.0 && g[0] > 0.0);
    }
}
