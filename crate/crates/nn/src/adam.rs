use crate::error::{NnError, Result};
use crate::Parameterized;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Rescale the gradient so its global L2 norm is at most this value.
    pub max_grad_norm: Option<f64>,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            max_grad_norm: None,
        }
    }
}

/// First and second moment estimates, laid out like the parameters they track.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new<P: Parameterized + ?Sized>(params: &P, config: AdamConfig) -> Self {
        let shapes: Vec<usize> = params.param_slices().iter().map(|s| s.len()).collect();
        Self {
            config,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    fn check_layout(&self, lens: &[usize]) -> Result<()> {
        let ok = lens.len() == self.m.len()
            && lens.iter().zip(&self.m).all(|(&n, m)| n == m.len())
            && self.v.iter().zip(&self.m).all(|(v, m)| v.len() == m.len());
        if ok {
            Ok(())
        } else {
            Err(NnError::shape("optimizer state does not match the parameter layout"))
        }
    }

    /// One bias-corrected Adam update. Nothing is modified if any gradient
    /// entry is non-finite.
    pub fn step<P, G>(&mut self, params: &mut P, grads: &G) -> Result<()>
    where
        P: Parameterized + ?Sized,
        G: Parameterized + ?Sized,
    {
        let g = grads.param_slices();
        let g_lens: Vec<usize> = g.iter().map(|s| s.len()).collect();
        self.check_layout(&g_lens)?;
        let p_lens: Vec<usize> = params.param_slices().iter().map(|s| s.len()).collect();
        self.check_layout(&p_lens)?;

        let mut sq = 0.0;
        for s in &g {
            for &x in *s {
                if !x.is_finite() {
                    return Err(NnError::NonFinite("gradient".into()));
                }
                sq += x * x;
            }
        }
        let scale = match self.config.max_grad_norm {
            Some(max) if sq.sqrt() > max => max / sq.sqrt(),
            _ => 1.0,
        };

        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
            ..
        } = self.config;
        self.t += 1;
        let bc1 = 1.0 - beta1.powf(self.t as f64);
        let bc2 = 1.0 - beta2.powf(self.t as f64);
        for (k, p) in params.param_slices_mut().into_iter().enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                let gi = g[k][i] * scale;
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
