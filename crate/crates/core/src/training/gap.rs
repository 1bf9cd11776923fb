//! Critic-tempered policy gap between the no-delay reference and what the
//! receiver actually aggregated.

use cdcma_nn::Mlp;

use crate::cgdc::{delay_cost, GainLayout, PairContext};
use crate::error::Result;

use super::record::TransitionRecord;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapEntry {
    pub step: usize,
    pub receiver: usize,
    pub sender: usize,
    pub gap: f64,
}

/// One entry per consumed message: `KL(π̃(e_{j,t}) ‖ π̃(m^r_{ij,t}))` with
/// the receiver's local inputs fixed. The records come from rollouts driven
/// by the delayed branch alone.
pub fn gap_entries(gain: &Mlp, layout: &GainLayout, records: &[TransitionRecord], eta: f64) -> Result<Vec<GapEntry>> {
    let mut out = Vec::new();
    for (t, rec) in records.iter().enumerate() {
        for (i, list) in rec.consumed.iter().enumerate() {
            for m in list {
                let ctx = PairContext {
                    receiver: i,
                    sender: m.sender,
                    obs: &rec.obs,
                    actions: &rec.actions,
                };
                let gap = delay_cost(gain, layout, &ctx, Some(&rec.embeddings[m.sender]), Some(&m.payload), eta)?;
                out.push(GapEntry {
                    step: t,
                    receiver: i,
                    sender: m.sender,
                    gap,
                });
            }
        }
    }
    Ok(out)
}

/// Receiver × sender mean gap and the number of entries behind each cell.
/// Cells without entries are 0.
#[derive(Debug, Clone, PartialEq)]
pub struct GapMatrix {
    pub mean: Vec<Vec<f64>>,
    pub count: Vec<Vec<usize>>,
}

impl GapMatrix {
    pub fn from_entries(entries: &[GapEntry], n_agents: usize) -> Self {
        let mut sum = vec![vec![0.0; n_agents]; n_agents];
        let mut count = vec![vec![0usize; n_agents]; n_agents];
        for e in entries {
            sum[e.receiver][e.sender] += e.gap;
            count[e.receiver][e.sender] += 1;
        }
        let mean = sum
            .iter()
            .zip(&count)
            .map(|(s, c)| s.iter().zip(c).map(|(v, &k)| if k == 0 { 0.0 } else { v / k as f64 }).collect())
            .collect();
        Self { mean, count }
    }

    pub fn max_entry(&self) -> f64 {
        self.mean.iter().flatten().fold(0.0, |a, &b| a.max(b))
    }
}

/// Mean over all entries, 0 when there are none.
pub fn mean_gap(entries: &[GapEntry]) -> f64 {
    if entries.is_empty() {
        0.0
    } else {
        entries.iter().map(|e| e.gap).sum::<f64>() / entries.len() as f64
    }
}
