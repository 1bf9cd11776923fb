//! Transition records and the FIFO replay buffer.

use std::collections::VecDeque;

use rand::Rng;

use crate::channel::Inbox;
use crate::error::{CoreError, Result};

/// One message as stored in replay.
#[derive(Debug, Clone, PartialEq)]
pub struct Received {
    pub sender: usize,
    pub payload: Vec<f64>,
    /// The request-time score `c̄` the receiver attached when asking.
    pub prior: f64,
}

/// Per-receiver message lists, senders ascending.
pub type Mailbox = Vec<Vec<Received>>;

pub fn mailbox_from_inbox(inbox: &Inbox) -> Mailbox {
    (0..inbox.n_agents())
        .map(|i| {
            inbox
                .senders(i)
                .map(|d| Received {
                    sender: d.sender,
                    payload: d.payload.clone(),
                    prior: d.prior,
                })
                .collect()
        })
        .collect()
}

pub fn empty_mailbox(n_agents: usize) -> Mailbox {
    vec![Vec::new(); n_agents]
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionRecord {
    pub obs: Vec<Vec<f64>>,
    /// Encoder memory fed in at this step (`e_{t−1}`, zeros at `t = 0`).
    pub prev_embedding: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub next_obs: Vec<Vec<f64>>,
    /// Episode hit its time limit. Value targets still bootstrap through it:
    /// observations carry no clock, so the cut is not a property of the state.
    pub done: bool,
    /// Messages delivered at the start of the step, before partner selection.
    pub heard: Mailbox,
    /// Messages aggregated by the receiver this step (`m^r_{ij,t}`).
    pub consumed: Mailbox,
    /// Messages aggregated at the next step (`m^r_{ij,t+1}`); empty when done.
    pub next_consumed: Mailbox,
    /// `e_{j,t}` from the encoder at collection time: the no-delay reference
    /// for every receiver of `j`, and the encoder memory for `t + 1`.
    pub embeddings: Vec<Vec<f64>>,
}

impl TransitionRecord {
    pub fn n_agents(&self) -> usize {
        self.obs.len()
    }

    pub fn validate(&self, n_agents: usize, obs_dim: usize, msg_dim: usize) -> Result<()> {
        let rows_ok = |rows: &[Vec<f64>], w: usize| rows.len() == n_agents && rows.iter().all(|r| r.len() == w);
        let mail_ok = |m: &Mailbox| {
            m.len() == n_agents
                && m.iter().enumerate().all(|(i, list)| {
                    list.windows(2).all(|w| w[0].sender < w[1].sender)
                        && list
                            .iter()
                            .all(|r| r.sender < n_agents && r.sender != i && r.payload.len() == msg_dim && r.prior.is_finite())
                })
        };
        let ok = rows_ok(&self.obs, obs_dim)
            && rows_ok(&self.next_obs, obs_dim)
            && rows_ok(&self.prev_embedding, msg_dim)
            && rows_ok(&self.embeddings, msg_dim)
            && self.actions.len() == n_agents
            && self.actions.iter().all(|&a| a < crate::env::N_ACTIONS)
            && self.rewards.len() == n_agents
            && mail_ok(&self.heard)
            && mail_ok(&self.consumed)
            && mail_ok(&self.next_consumed);
        if ok {
            Ok(())
        } else {
            Err(CoreError::contract("transition record has missing or malformed slots"))
        }
    }

    /// Flat encoding used inside checkpoints. Integers are stored as exact
    /// `f64` values.
    pub fn write_flat(&self, out: &mut Vec<f64>) {
        let mut rows = |rows: &[Vec<f64>]| {
            for r in rows {
                out.extend_from_slice(r);
            }
        };
        rows(&self.obs);
        rows(&self.prev_embedding);
        rows(&self.next_obs);
        rows(&self.embeddings);
        out.extend(self.actions.iter().map(|&a| a as f64));
        out.extend_from_slice(&self.rewards);
        out.push(if self.done { 1.0 } else { 0.0 });
        for mail in [&self.heard, &self.consumed, &self.next_consumed] {
            for list in mail {
                out.push(list.len() as f64);
                for r in list {
                    out.push(r.sender as f64);
                    out.push(r.prior);
                    out.extend_from_slice(&r.payload);
                }
            }
        }
    }

    pub fn read_flat(data: &[f64], at: &mut usize, n: usize, obs_dim: usize, msg_dim: usize) -> Result<Self> {
        let bad = || CoreError::Decode("replay data truncated or malformed".into());
        let take = |k: usize, at: &mut usize| -> Result<Vec<f64>> {
            let end = at.checked_add(k).ok_or_else(bad)?;
            let s = data.get(*at..end).ok_or_else(bad)?.to_vec();
            *at = end;
            Ok(s)
        };
        let int = |v: f64, limit: usize| -> Result<usize> {
            if v >= 0.0 && v.fract() == 0.0 && v < limit as f64 {
                Ok(v as usize)
            } else {
                Err(bad())
            }
        };
        let rows = |w: usize, at: &mut usize| -> Result<Vec<Vec<f64>>> {
            (0..n).map(|_| take(w, at)).collect()
        };
        let obs = rows(obs_dim, at)?;
        let prev_embedding = rows(msg_dim, at)?;
        let next_obs = rows(obs_dim, at)?;
        let embeddings = rows(msg_dim, at)?;
        let actions = take(n, at)?
            .into_iter()
            .map(|a| int(a, crate::env::N_ACTIONS))
            .collect::<Result<Vec<_>>>()?;
        let rewards = take(n, at)?;
        let done = match take(1, at)?[0] {
            d if d == 0.0 => false,
            d if d == 1.0 => true,
            _ => return Err(bad()),
        };
        let mut mail = || -> Result<Mailbox> {
            let mut m = Vec::with_capacity(n);
            for _ in 0..n {
                let k = int(take(1, at)?[0], n)?;
                let mut list = Vec::with_capacity(k);
                for _ in 0..k {
                    let head = take(2, at)?;
                    list.push(Received {
                        sender: int(head[0], n)?,
                        prior: head[1],
                        payload: take(msg_dim, at)?,
                    });
                }
                m.push(list);
            }
            Ok(m)
        };
        let heard = mail()?;
        let consumed = mail()?;
        let next_consumed = mail()?;
        let rec = Self {
            obs,
            prev_embedding,
            actions,
            rewards,
            next_obs,
            done,
            heard,
            consumed,
            next_consumed,
            embeddings,
        };
        rec.validate(n, obs_dim, msg_dim).map_err(|_| bad())?;
        Ok(rec)
    }
}

/// Fixed-capacity FIFO of transitions with uniform sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<TransitionRecord>,
    /// Total records ever pushed.
    pushed: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(CoreError::config("replay capacity must be positive"));
        }
        Ok(Self {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
            pushed: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn pushed(&self) -> u64 {
        self.pushed
    }

    pub fn push(&mut self, record: TransitionRecord) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(record);
        self.pushed += 1;
    }

    pub fn iter(&self) -> impl Iterator<Item = &TransitionRecord> {
        self.items.iter()
    }

    /// Uniform sampling with replacement. Every sampled request prior must be
    /// positive: a stored message can only exist if the gate opened.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<&TransitionRecord>> {
        if self.items.is_empty() || batch == 0 {
            return Err(CoreError::contract("cannot sample an empty batch"));
        }
        let out: Vec<&TransitionRecord> = (0..batch)
            .map(|_| &self.items[rng.gen_range(0..self.items.len())])
            .collect();
        for r in &out {
            let gated = r
                .consumed
                .iter()
                .chain(&r.heard)
                .flatten()
                .all(|m| m.prior > 0.0);
            if !gated {
                return Err(CoreError::contract("stored message with a non-positive request prior"));
            }
        }
        Ok(out)
    }

    pub(crate) fn restore_parts(capacity: usize, items: Vec<TransitionRecord>, pushed: u64) -> Result<Self> {
        if items.len() > capacity {
            return Err(CoreError::Decode("replay holds more records than its capacity".into()));
        }
        let mut buf = Self::new(capacity)?;
        buf.items.extend(items);
        buf.pushed = pushed;
        Ok(buf)
    }
}
