//! Numerically careful probability helpers over small vectors.

use crate::error::{NnError, Result};

fn check_logits(logits: &[f64], eta: f64) -> Result<()> {
    if logits.is_empty() {
        return Err(NnError::Domain("softmax of an empty vector".into()));
    }
    if !(eta >= 0.0) || !eta.is_finite() {
        return Err(NnError::Domain(format!("inverse temperature {eta} must be finite and non-negative")));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(NnError::NonFinite("softmax logits".into()));
    }
    Ok(())
}

/// `softmax(η·z)`, computed after subtracting the maximum logit.
pub fn softmax(logits: &[f64], eta: f64) -> Result<Vec<f64>> {
    check_logits(logits, eta)?;
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| (eta * (z - max)).exp()).collect();
    // the max term contributes exp(0) = 1, so the sum is at least 1
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= sum);
    Ok(out)
}

pub fn log_softmax(logits: &[f64], eta: f64) -> Result<Vec<f64>> {
    check_logits(logits, eta)?;
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|&z| (eta * (z - max)).exp()).sum::<f64>().ln();
    Ok(logits.iter().map(|&z| eta * (z - max) - lse).collect())
}

/// Gradient of a loss with respect to logits, given `p = softmax(z)` and
/// the upstream gradient `dp` with respect to `p` (at η = 1).
pub fn softmax_backward(p: &[f64], dp: &[f64]) -> Vec<f64> {
    debug_assert_eq!(p.len(), dp.len());
    let dot: f64 = p.iter().zip(dp).map(|(a, b)| a * b).sum();
    p.iter().zip(dp).map(|(pi, di)| pi * (di - dot)).collect()
}

fn check_pair(p: &[f64], q: &[f64]) -> Result<()> {
    if p.len() != q.len() {
        return Err(NnError::Shape(format!("distributions have {} and {} entries", p.len(), q.len())));
    }
    if p.iter().chain(q).any(|v| !v.is_finite() || *v < 0.0) {
        return Err(NnError::Domain("distribution has a negative or non-finite entry".into()));
    }
    Ok(())
}

/// `KL(p ‖ q) = Σ p log(p/q)`. Terms with `p = 0` contribute nothing; `q = 0`
/// where `p > 0` is an error.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    check_pair(p, q)?;
    let mut kl = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Err(NnError::Domain("KL undefined: q has zero mass where p does not".into()));
        }
        kl += pi * (pi / qi).ln();
    }
    // rounding can leave a tiny negative value when p ≈ q
    Ok(kl.max(0.0))
}

pub fn total_variation(p: &[f64], q: &[f64]) -> Result<f64> {
    check_pair(p, q)?;
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// `−log softmax(z)[target]`.
pub fn cross_entropy(logits: &[f64], target: usize) -> Result<f64> {
    if target >= logits.len() {
        return Err(NnError::Domain(format!("target class {target} out of {} classes", logits.len())));
    }
    Ok(-log_softmax(logits, 1.0)?[target])
}

pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some(b) if values[b] >= v => {}
            _ => best = Some(i),
        }
    }
    best
}

pub fn one_hot(index: usize, len: usize) -> Vec<f64> {
    let mut v = vec![0.0; len];
    if index < len {
        v[index] = 1.0;
    }
    v
}
