//! Brute-force delivery oracle: keep every packet ever sent and, at each
//! step, scan the whole list for the newest arrival per ordered pair.

use cdcma_core::channel::{DelayBuffer, Delivered, Inbox};

#[derive(Debug, Clone)]
struct Sent {
    sender: usize,
    receiver: usize,
    step: usize,
    delay: usize,
    seq: usize,
    payload: Vec<f64>,
    prior: f64,
}

/// `plan[link][step]` is the delay of the packet sent on that link at that
/// step, or `None` when nothing is sent. Links are the ordered pairs
/// `(j, i)`, `j ≠ i`, in row-major order.
pub type Plan = Vec<Vec<Option<usize>>>;

pub fn links(n: usize) -> Vec<(usize, usize)> {
    (0..n)
        .flat_map(|j| (0..n).filter(move |&i| i != j).map(move |i| (j, i)))
        .collect()
}

fn oracle_inbox(n: usize, sent: &[Sent], t: usize) -> Vec<Option<Delivered>> {
    let mut out = vec![None; n * n];
    for (j, i) in links(n) {
        let best = sent
            .iter()
            .filter(|p| p.sender == j && p.receiver == i && p.step + p.delay == t)
            .max_by_key(|p| (p.step, p.seq));
        out[i * n + j] = best.map(|p| Delivered {
            sender: j,
            payload: p.payload.clone(),
            prior: p.prior,
        });
    }
    out
}

fn same_bits(a: &Option<Delivered>, b: Option<&Delivered>) -> bool {
    match (a, b) {
        (None, None) => true,
        (Some(x), Some(y)) => {
            x.sender == y.sender
                && x.prior.to_bits() == y.prior.to_bits()
                && x.payload.len() == y.payload.len()
                && x.payload.iter().zip(&y.payload).all(|(p, q)| p.to_bits() == q.to_bits())
        }
        _ => false,
    }
}

/// Runs one plan through the queue implementation and the oracle; returns the
/// number of (step, receiver, sender) slots compared, or the first mismatch.
pub fn compare(n: usize, plan: &Plan) -> Result<usize, String> {
    let steps = plan.iter().map(Vec::len).max().unwrap_or(0);
    let max_delay = plan.iter().flatten().flatten().copied().max().unwrap_or(0);
    let mut buf = DelayBuffer::new(n, false);
    let mut sent = Vec::new();
    let mut compared = 0;
    let pairs = links(n);
    for t in 0..steps + max_delay + 1 {
        let inbox: Inbox = buf.deliver_arrivals(t as u64).map_err(|e| e.to_string())?;
        let want = oracle_inbox(n, &sent, t);
        for (j, i) in &pairs {
            if !same_bits(&want[i * n + j], inbox.slot(*i, *j)) {
                return Err(format!("step {t}, pair {j}->{i}: oracle {:?}, queue {:?}", want[i * n + j], inbox.slot(*i, *j)));
            }
            compared += 1;
        }
        for (l, &(j, i)) in pairs.iter().enumerate() {
            if let Some(Some(d)) = plan[l].get(t) {
                let p = Sent {
                    sender: j,
                    receiver: i,
                    step: t,
                    delay: *d,
                    seq: sent.len(),
                    payload: vec![(j * 100 + i * 10) as f64 + t as f64 / 8.0, sent.len() as f64],
                    prior: 0.5 + t as f64,
                };
                buf.enqueue(j, i, t as u64, *d as u64, p.payload.clone(), p.prior)
                    .map_err(|e| e.to_string())?;
                sent.push(p);
            }
        }
    }
    if buf.in_flight() != 0 {
        return Err("packets left in flight after the drain".into());
    }
    Ok(compared)
}

/// Decodes `index` as base-`choices.len()` digits, one per step.
pub fn sequence(mut index: usize, steps: usize, choices: &[Option<usize>]) -> Vec<Option<usize>> {
    (0..steps)
        .map(|_| {
            let c = choices[index % choices.len()];
            index /= choices.len();
            c
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Coverage {
    pub plans: usize,
    pub slots: usize,
}

/// Every assignment of delays in `{1, 2}` to every link and step, jointly.
/// There are `2^(links·steps)` plans, so keep `steps` small.
pub fn joint_exhaustive(n: usize, steps: usize) -> Result<Coverage, String> {
    let l = links(n).len();
    let total = 1usize << (l * steps);
    let mut slots = 0;
    for code in 0..total {
        let plan: Plan = (0..l)
            .map(|k| {
                (0..steps)
                    .map(|s| Some(1 + ((code >> (k * steps + s)) & 1)))
                    .collect()
            })
            .collect();
        slots += compare(n, &plan)?;
    }
    Ok(Coverage { plans: total, slots })
}

/// Every link runs through all `3^steps` sequences over `{none, 1, 2}`.
///
/// Link `k` at round `r` uses sequence `(m_k · r) mod 3^steps` with `m_k`
/// coprime to 3, so each link sees every sequence exactly once while the
/// other links carry different traffic in the same buffer.
pub fn per_link_exhaustive(n: usize, steps: usize) -> Result<Coverage, String> {
    const MULTIPLIERS: [usize; 8] = [1, 2, 4, 5, 7, 8, 10, 11];
    let choices = [None, Some(1), Some(2)];
    let l = links(n).len();
    assert!(l <= MULTIPLIERS.len(), "too many links for the multiplier table");
    let rounds = 3usize.pow(steps as u32);
    let mut slots = 0;
    for r in 0..rounds {
        let plan: Plan = (0..l)
            .map(|k| sequence((MULTIPLIERS[k] * r) % rounds, steps, &choices))
            .collect();
        slots += compare(n, &plan)?;
    }
    Ok(Coverage { plans: rounds, slots })
}

/// Every joint assignment where each sender draws one delay in `{1, 2}` per
/// step and uses it on all of its outgoing links: `2^(n·steps)` plans.
pub fn broadcast_exhaustive(n: usize, steps: usize) -> Result<Coverage, String> {
    let pairs = links(n);
    let total = 1usize << (n * steps);
    let mut slots = 0;
    for code in 0..total {
        let plan: Plan = pairs
            .iter()
            .map(|&(j, _)| (0..steps).map(|s| Some(1 + ((code >> (j * steps + s)) & 1))).collect())
            .collect();
        slots += compare(n, &plan)?;
    }
    Ok(Coverage { plans: total, slots })
}
