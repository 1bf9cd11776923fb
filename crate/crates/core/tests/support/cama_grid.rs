//! Grid maximization of the prior-regularized attention objective
//! `Σ α_j s_j − (1/β)·KL(α ‖ ᾱ)` over the simplex, independent of the
//! closed-form weights.

use cdcma_core::agent::{Cama, MsgRef, Pooling};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn objective(alpha: &[f64], scores: &[f64], prior: &[f64], beta: f64) -> f64 {
    let total: f64 = prior.iter().sum();
    let mut lin = 0.0;
    let mut kl = 0.0;
    for ((&a, &s), &c) in alpha.iter().zip(scores).zip(prior) {
        lin += a * s;
        if a > 0.0 {
            kl += a * (a / (c / total)).ln();
        }
    }
    lin - kl / beta
}

fn best_on_grid(scores: &[f64], prior: &[f64], beta: f64, center: &[f64], radius: f64, step: f64) -> Vec<f64> {
    let k = (radius / step).round() as i64;
    let mut best = (f64::NEG_INFINITY, center.to_vec());
    match scores.len() {
        2 => {
            for a in -k..=k {
                let x = center[0] + a as f64 * step;
                if !(0.0..=1.0).contains(&x) {
                    continue;
                }
                let al = [x, 1.0 - x];
                let v = objective(&al, scores, prior, beta);
                if v > best.0 {
                    best = (v, al.to_vec());
                }
            }
        }
        3 => {
            for a in -k..=k {
                let x = center[0] + a as f64 * step;
                if !(0.0..=1.0).contains(&x) {
                    continue;
                }
                for b in -k..=k {
                    let y = center[1] + b as f64 * step;
                    let z = 1.0 - x - y;
                    if !(0.0..=1.0).contains(&y) || z < 0.0 {
                        continue;
                    }
                    let al = [x, y, z];
                    let v = objective(&al, scores, prior, beta);
                    if v > best.0 {
                        best = (v, al.to_vec());
                    }
                }
            }
        }
        n => panic!("grid search supports 2 or 3 senders, got {n}"),
    }
    best.1
}

/// Coarse grid with step 1e-3 over the whole simplex, then a 1e-5 grid in a
/// 2e-3 box around the coarse winner.
pub fn grid_maximizer(scores: &[f64], prior: &[f64], beta: f64) -> Vec<f64> {
    let n = scores.len();
    let mid = vec![0.5; n];
    let coarse = best_on_grid(scores, prior, beta, &mid, 0.5, 1e-3);
    best_on_grid(scores, prior, beta, &coarse, 2e-3, 1e-5)
}

pub fn tv(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

fn dot(w: &[f64], rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
    (0..rows).map(|r| (0..cols).map(|c| w[r * cols + c] * x[c]).sum()).collect()
}

/// One random attention instance: the closed-form weights from the layer and
/// the grid maximizer of the objective built from independently computed
/// content scores. Returns their total variation distance.
pub fn instance_tv(seed: u64, senders: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (dk, de, dm) = (4, 5, 3);
    let cama = Cama::random(dk, de, dm, &mut rng);
    let beta = rng.gen_range(0.3..2.0);
    let e: Vec<f64> = (0..de).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let payloads: Vec<Vec<f64>> = (0..senders)
        .map(|_| (0..dm).map(|_| rng.gen_range(-2.0..2.0)).collect())
        .collect();
    let prior: Vec<f64> = (0..senders).map(|_| rng.gen_range(0.05..3.0)).collect();
    let msgs: Vec<MsgRef<'_>> = payloads
        .iter()
        .zip(&prior)
        .enumerate()
        .map(|(j, (p, &c))| MsgRef { sender: j, payload: p, prior: c })
        .collect();
    let closed = cama.aggregate(&e, &msgs, Pooling::Prior, beta).unwrap().alpha;
    let q = dot(&cama.wq, dk, de, &e);
    let scores: Vec<f64> = payloads
        .iter()
        .map(|m| {
            let k = dot(&cama.wk, dk, dm, m);
            q.iter().zip(&k).map(|(a, b)| a * b).sum()
        })
        .collect();
    tv(&closed, &grid_maximizer(&scores, &prior, beta))
}
