//! Delayed message transport between agents.
//!
//! Each ordered pair `(j → i)` has a queue of in-flight packets. A packet sent
//! at step `k` with delay `d` becomes visible to the receiver at step `k + d`.
//! When several packets for the same pair arrive at once, only the one with
//! the largest send step is exposed. Agents see [`Delivered`] values, which
//! carry the payload, sender and request-time prior but never the delay.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use libm::erfc;

use crate::error::{CoreError, Result};
use crate::rng::{keyed_uniform, Stream};

pub const DEFAULT_D_MAX: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
    SuperHard,
    /// Delay-free transport.
    None,
}

impl Difficulty {
    pub const DELAYED: [Difficulty; 4] = [
        Difficulty::Easy,
        Difficulty::Medium,
        Difficulty::Hard,
        Difficulty::SuperHard,
    ];

    /// `(μ, σ)` of the truncated discrete normal, in steps.
    pub fn normal_params(self) -> Option<(f64, f64)> {
        match self {
            Difficulty::Easy => Some((1.00, 0.65)),
            Difficulty::Medium => Some((2.00, 0.80)),
            Difficulty::Hard => Some((3.00, 0.70)),
            Difficulty::SuperHard => Some((4.00, 0.70)),
            Difficulty::None => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Medium => "medium",
            Difficulty::Hard => "hard",
            Difficulty::SuperHard => "super_hard",
            Difficulty::None => "none",
        }
    }
}

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Difficulty {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "easy" => Ok(Difficulty::Easy),
            "medium" => Ok(Difficulty::Medium),
            "hard" => Ok(Difficulty::Hard),
            "super_hard" | "superhard" => Ok(Difficulty::SuperHard),
            "none" | "delay_free" => Ok(Difficulty::None),
            other => Err(CoreError::config(format!("unknown delay difficulty {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DelaySource {
    Difficulty(Difficulty),
    Normal { mu: f64, sigma: f64 },
    Categorical,
    DelayFree,
}

/// A delay distribution over `{1, …, d_max}`, or the delay-free channel.
#[derive(Debug, Clone, PartialEq)]
pub struct DelaySpec {
    source: DelaySource,
    d_max: usize,
    /// `pmf[d - 1]` is the probability of delay `d`. Empty when delay-free.
    pmf: Vec<f64>,
    cdf: Vec<f64>,
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn std_normal_sf(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// `Φ(b) − Φ(a)` for `a < b`, evaluated on the tail side that avoids
/// cancellation.
fn normal_mass(a: f64, b: f64) -> f64 {
    if a >= 0.0 {
        std_normal_sf(a) - std_normal_sf(b)
    } else {
        std_normal_cdf(b) - std_normal_cdf(a)
    }
}

impl DelaySpec {
    pub fn from_difficulty(difficulty: Difficulty, d_max: usize) -> Result<Self> {
        match difficulty.normal_params() {
            None => Self::delay_free(d_max),
            Some((mu, sigma)) => {
                let mut spec = Self::normal(mu, sigma, d_max)?;
                spec.source = DelaySource::Difficulty(difficulty);
                Ok(spec)
            }
        }
    }

    /// Truncated discrete normal: bin `d` gets `Φ((d+½−μ)/σ) − Φ((d−½−μ)/σ)`,
    /// renormalized over `1..=d_max`.
    pub fn normal(mu: f64, sigma: f64, d_max: usize) -> Result<Self> {
        if d_max == 0 {
            return Err(CoreError::config("d_max must be at least 1"));
        }
        if !mu.is_finite() || !(sigma > 0.0) || !sigma.is_finite() {
            return Err(CoreError::config(format!("invalid delay parameters mu={mu} sigma={sigma}")));
        }
        let raw: Vec<f64> = (1..=d_max)
            .map(|d| {
                let d = d as f64;
                normal_mass((d - 0.5 - mu) / sigma, (d + 0.5 - mu) / sigma)
            })
            .collect();
        let mut spec = Self::categorical(&raw)?;
        spec.source = DelaySource::Normal { mu, sigma };
        Ok(spec)
    }

    /// An explicit (possibly unnormalized) PMF over delays `1..=len`.
    pub fn categorical(weights: &[f64]) -> Result<Self> {
        if weights.is_empty() {
            return Err(CoreError::config("delay PMF needs at least one bin"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(CoreError::config("delay PMF entries must be finite and non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(CoreError::config("delay PMF has no mass"));
        }
        let pmf: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let mut cdf = Vec::with_capacity(pmf.len());
        let mut acc = 0.0;
        for p in &pmf {
            acc += p;
            cdf.push(acc);
        }
        Ok(Self {
            source: DelaySource::Categorical,
            d_max: pmf.len(),
            pmf,
            cdf,
        })
    }

    /// Every message is delivered in the step it is sent. `d_max` is kept
    /// only so that horizon grids stay defined.
    pub fn delay_free(d_max: usize) -> Result<Self> {
        if d_max == 0 {
            return Err(CoreError::config("d_max must be at least 1"));
        }
        Ok(Self {
            source: DelaySource::DelayFree,
            d_max,
            pmf: Vec::new(),
            cdf: Vec::new(),
        })
    }

    pub fn source(&self) -> &DelaySource {
        &self.source
    }

    pub fn is_delay_free(&self) -> bool {
        self.source == DelaySource::DelayFree
    }

    pub fn d_max(&self) -> usize {
        self.d_max
    }

    /// Probabilities for delays `1..=d_max`. Empty in delay-free mode.
    pub fn pmf(&self) -> &[f64] {
        &self.pmf
    }

    /// Inverse-CDF lookup for a uniform draw `u ∈ [0, 1)`.
    pub fn delay_for_uniform(&self, u: f64) -> usize {
        if self.is_delay_free() {
            return 0;
        }
        for (k, &c) in self.cdf.iter().enumerate() {
            if u < c {
                return k + 1;
            }
        }
        // u within rounding of 1.0
        self.d_max
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        if self.is_delay_free() {
            return 0;
        }
        self.delay_for_uniform(rng.gen::<f64>())
    }

    /// The delay of the packet `sender → receiver` sent at `step`.
    ///
    /// The draw depends only on these keys and the episode seed, never on
    /// anything the agents did.
    pub fn delay_at(&self, episode_seed: u64, sender: usize, receiver: usize, step: usize) -> usize {
        if self.is_delay_free() {
            return 0;
        }
        let u = keyed_uniform(
            episode_seed,
            Stream::Delay,
            &[sender as u64, receiver as u64, step as u64],
        );
        self.delay_for_uniform(u)
    }
}

/// What a receiver sees of a delivered packet.
#[derive(Debug, Clone, PartialEq)]
pub struct Delivered {
    pub sender: usize,
    pub payload: Vec<f64>,
    /// The sender-selection score the receiver predicted when requesting.
    pub prior: f64,
}

/// Per-receiver view of one step's deliveries: `slot(i, j)` is `None` for the
/// null message.
#[derive(Debug, Clone, PartialEq)]
pub struct Inbox {
    n_agents: usize,
    slots: Vec<Option<Delivered>>,
}

impl Inbox {
    pub fn empty(n_agents: usize) -> Self {
        Self {
            n_agents,
            slots: vec![None; n_agents * n_agents],
        }
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn slot(&self, receiver: usize, sender: usize) -> Option<&Delivered> {
        self.slots[receiver * self.n_agents + sender].as_ref()
    }

    pub fn set(&mut self, receiver: usize, sender: usize, msg: Option<Delivered>) {
        self.slots[receiver * self.n_agents + sender] = msg;
    }

    /// Available senders for `receiver` in ascending order.
    pub fn senders(&self, receiver: usize) -> impl Iterator<Item = &Delivered> {
        (0..self.n_agents).filter_map(move |j| self.slot(receiver, j))
    }

    pub fn count(&self, receiver: usize) -> usize {
        self.senders(receiver).count()
    }

    pub fn total(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Packet {
    send_step: u64,
    delay: u64,
    seq: u64,
    prior: f64,
    payload: Vec<f64>,
}

impl Packet {
    fn arrival(&self) -> u64 {
        self.send_step + self.delay
    }

    /// Order within a queue: arrival, then send step, then enqueue order.
    fn key(&self) -> (u64, u64, u64) {
        (self.arrival(), self.send_step, self.seq)
    }
}

/// In-flight packets for every ordered pair plus last-delivered slots.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayBuffer {
    n_agents: usize,
    delay_free: bool,
    /// Last step passed to delivery, if any.
    now: Option<u64>,
    next_seq: u64,
    /// Indexed by `sender * n + receiver`.
    queues: Vec<Vec<Packet>>,
    last: Vec<Option<Packet>>,
}

impl DelayBuffer {
    pub fn new(n_agents: usize, delay_free: bool) -> Self {
        Self {
            n_agents,
            delay_free,
            now: None,
            next_seq: 0,
            queues: vec![Vec::new(); n_agents * n_agents],
            last: vec![None; n_agents * n_agents],
        }
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn is_delay_free(&self) -> bool {
        self.delay_free
    }

    fn pair(&self, sender: usize, receiver: usize) -> Result<usize> {
        if sender >= self.n_agents || receiver >= self.n_agents {
            return Err(CoreError::contract(format!(
                "pair ({sender} -> {receiver}) out of range for {} agents",
                self.n_agents
            )));
        }
        if sender == receiver {
            return Err(CoreError::contract(format!("agent {sender} cannot message itself")));
        }
        Ok(sender * self.n_agents + receiver)
    }

    pub fn queue_len(&self, sender: usize, receiver: usize) -> usize {
        self.pair(sender, receiver).map_or(0, |p| self.queues[p].len())
    }

    pub fn in_flight(&self) -> usize {
        self.queues.iter().map(Vec::len).sum()
    }

    /// Sender and send step of the most recent packet ever delivered on a pair.
    pub fn last_delivered(&self, sender: usize, receiver: usize) -> Option<(usize, u64)> {
        let p = self.pair(sender, receiver).ok()?;
        self.last[p].as_ref().map(|pk| (sender, pk.send_step))
    }

    pub fn enqueue(
        &mut self,
        sender: usize,
        receiver: usize,
        send_step: u64,
        delay: u64,
        payload: Vec<f64>,
        prior: f64,
    ) -> Result<()> {
        let p = self.pair(sender, receiver)?;
        if self.delay_free && delay != 0 {
            return Err(CoreError::contract("delay-free channel only accepts delay 0"));
        }
        if !self.delay_free && delay == 0 {
            return Err(CoreError::contract("delayed channel requires delay >= 1"));
        }
        if !prior.is_finite() {
            return Err(CoreError::contract("packet prior must be finite"));
        }
        let packet = Packet {
            send_step,
            delay,
            seq: self.next_seq,
            prior,
            payload,
        };
        if let Some(now) = self.now {
            let arrival = packet.arrival();
            let too_early = if self.delay_free { arrival < now } else { arrival <= now };
            if too_early {
                return Err(CoreError::contract(format!(
                    "packet would arrive at {arrival}, delivery already ran for step {now}"
                )));
            }
        }
        self.next_seq += 1;
        let q = &mut self.queues[p];
        let pos = q.partition_point(|x| x.key() <= packet.key());
        q.insert(pos, packet);
        Ok(())
    }

    fn take_arrivals(&mut self, t: u64) -> Inbox {
        let n = self.n_agents;
        let mut inbox = Inbox::empty(n);
        for sender in 0..n {
            for receiver in 0..n {
                if sender == receiver {
                    continue;
                }
                let p = sender * n + receiver;
                let q = &mut self.queues[p];
                let count = q.iter().take_while(|x| x.arrival() <= t).count();
                if count == 0 {
                    continue;
                }
                // the latest (send step, seq) among arrivals wins
                let winner = q
                    .drain(..count)
                    .max_by_key(|x| (x.send_step, x.seq))
                    .expect("count > 0");
                inbox.set(
                    receiver,
                    sender,
                    Some(Delivered {
                        sender,
                        payload: winner.payload.clone(),
                        prior: winner.prior,
                    }),
                );
                let replace = self.last[p]
                    .as_ref()
                    .map_or(true, |old| (winner.send_step, winner.seq) >= (old.send_step, old.seq));
                if replace {
                    self.last[p] = Some(winner);
                }
            }
        }
        inbox
    }

    /// Removes every packet arriving at `t` and exposes, per pair, the one with
    /// the largest send step. Must be called once per step with `t`
    /// increasing by one.
    pub fn deliver_arrivals(&mut self, t: u64) -> Result<Inbox> {
        match self.now {
            Some(now) if t != now + 1 => {
                return Err(CoreError::contract(format!(
                    "delivery for step {t} after step {now}"
                )))
            }
            _ => {}
        }
        if self.queues.iter().flatten().any(|x| x.arrival() < t) {
            return Err(CoreError::contract(format!("a packet was due before step {t}")));
        }
        self.now = Some(t);
        Ok(self.take_arrivals(t))
    }

    /// Delay-free channels only: delivers the packets enqueued with delay 0
    /// during the current step.
    pub fn deliver_immediate(&mut self) -> Result<Inbox> {
        if !self.delay_free {
            return Err(CoreError::contract("immediate delivery on a delayed channel"));
        }
        let t = self
            .now
            .ok_or_else(|| CoreError::contract("immediate delivery before the first step"))?;
        Ok(self.take_arrivals(t))
    }

    /// Canonical byte encoding of the whole buffer state.
    ///
    /// Layout (little-endian): magic `CDCMABUF`, version u32, agent count u32,
    /// delay-free flag u8, current-step flag u8 + u64, next sequence u64, then
    /// for each pair `(sender, receiver)` in row-major order with
    /// `sender != receiver`: queue length u32 followed by packets, then a
    /// presence byte and packet for the last-delivered slot. A packet is send
    /// step u64, delay u64, seq u64, prior f64, payload length u32 and the
    /// payload as f64.
    pub fn snapshot(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(SNAPSHOT_MAGIC);
        out.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.n_agents as u32).to_le_bytes());
        out.push(self.delay_free as u8);
        match self.now {
            Some(t) => {
                out.push(1);
                out.extend_from_slice(&t.to_le_bytes());
            }
            None => {
                out.push(0);
                out.extend_from_slice(&0u64.to_le_bytes());
            }
        }
        out.extend_from_slice(&self.next_seq.to_le_bytes());
        for s in 0..self.n_agents {
            for r in 0..self.n_agents {
                if s == r {
                    continue;
                }
                let p = s * self.n_agents + r;
                out.extend_from_slice(&(self.queues[p].len() as u32).to_le_bytes());
                for pk in &self.queues[p] {
                    write_packet(&mut out, pk);
                }
                match &self.last[p] {
                    Some(pk) => {
                        out.push(1);
                        write_packet(&mut out, pk);
                    }
                    None => out.push(0),
                }
            }
        }
        out
    }

    /// Inverse of [`DelayBuffer::snapshot`]. Rejects anything that is not a
    /// canonical encoding of a valid buffer.
    pub fn restore(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(8)? != SNAPSHOT_MAGIC {
            return Err(decode_err("bad magic"));
        }
        let version = r.u32()?;
        if version != SNAPSHOT_VERSION {
            return Err(decode_err(format!("unsupported version {version}")));
        }
        let n = r.u32()? as usize;
        if n > MAX_SNAPSHOT_AGENTS {
            return Err(decode_err(format!("{n} agents exceeds the supported maximum")));
        }
        let delay_free = match r.u8()? {
            0 => false,
            1 => true,
            other => return Err(decode_err(format!("bad delay-free flag {other}"))),
        };
        let now_flag = r.u8()?;
        let now_raw = r.u64()?;
        let now = match now_flag {
            0 if now_raw == 0 => None,
            1 => Some(now_raw),
            _ => return Err(decode_err("bad current-step field")),
        };
        let next_seq = r.u64()?;
        let mut buf = DelayBuffer::new(n, delay_free);
        buf.now = now;
        buf.next_seq = next_seq;
        for s in 0..n {
            for rcv in 0..n {
                if s == rcv {
                    continue;
                }
                let p = s * n + rcv;
                let len = r.u32()? as usize;
                // each packet needs at least 36 bytes
                if len > r.remaining() / 36 {
                    return Err(decode_err("queue length exceeds input"));
                }
                let mut q = Vec::with_capacity(len);
                for _ in 0..len {
                    let pk = read_packet(&mut r)?;
                    if pk.seq >= next_seq {
                        return Err(decode_err("packet sequence number from the future"));
                    }
                    if (delay_free && pk.delay != 0) || (!delay_free && pk.delay == 0) {
                        return Err(decode_err("packet delay inconsistent with channel mode"));
                    }
                    if let Some(t) = now {
                        if pk.arrival() < t || (!delay_free && pk.arrival() == t) {
                            return Err(decode_err("in-flight packet is already due"));
                        }
                    }
                    if q.last().is_some_and(|prev: &Packet| prev.key() >= pk.key()) {
                        return Err(decode_err("queue not in canonical order"));
                    }
                    q.push(pk);
                }
                buf.queues[p] = q;
                buf.last[p] = match r.u8()? {
                    0 => None,
                    1 => Some(read_packet(&mut r)?),
                    other => return Err(decode_err(format!("bad slot flag {other}"))),
                };
            }
        }
        if r.remaining() != 0 {
            return Err(decode_err("trailing bytes"));
        }
        Ok(buf)
    }
}

const SNAPSHOT_MAGIC: &[u8; 8] = b"CDCMABUF";
const SNAPSHOT_VERSION: u32 = 1;
const MAX_SNAPSHOT_AGENTS: usize = 256;

fn decode_err(msg: impl Into<String>) -> CoreError {
    CoreError::Decode(msg.into())
}

fn write_packet(out: &mut Vec<u8>, pk: &Packet) {
    out.extend_from_slice(&pk.send_step.to_le_bytes());
    out.extend_from_slice(&pk.delay.to_le_bytes());
    out.extend_from_slice(&pk.seq.to_le_bytes());
    out.extend_from_slice(&pk.prior.to_le_bytes());
    out.extend_from_slice(&(pk.payload.len() as u32).to_le_bytes());
    for v in &pk.payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn read_packet(r: &mut Reader<'_>) -> Result<Packet> {
    let send_step = r.u64()?;
    let delay = r.u64()?;
    let seq = r.u64()?;
    let prior = f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
    let len = r.u32()? as usize;
    if len > r.remaining() / 8 {
        return Err(decode_err("payload length exceeds input"));
    }
    let payload = r
        .take(len * 8)?
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    if send_step.checked_add(delay).is_none() {
        return Err(decode_err("arrival step overflows"));
    }
    Ok(Packet {
        send_step,
        delay,
        seq,
        prior,
        payload,
    })
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(decode_err(format!("truncated at offset {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
