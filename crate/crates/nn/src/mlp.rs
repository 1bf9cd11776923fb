//! Multilayer perceptrons with a hand-written backward pass.
//!
//! Weights are stored row-major with shape `(out_dim, in_dim)`, so a batched
//! forward pass is `Z = X Wᵀ + b` followed by the layer activation.

use rand::distributions::{Distribution, Uniform};
use rand::Rng;

use crate::error::{NnError, Result};
use crate::matrix::{gemm_a_b, gemm_a_bt, gemm_at_b, Matrix};
use crate::Parameterized;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
            Activation::Tanh => z.tanh(),
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Identity => 1,
            Activation::Tanh => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Identity),
            2 => Some(Activation::Tanh),
            _ => None,
        }
    }
}

/// One affine layer followed by an element-wise activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    in_dim: usize,
    out_dim: usize,
    activation: Activation,
    weights: Vec<f64>,
    /// Empty when the layer has no bias term.
    bias: Vec<f64>,
    has_bias: bool,
}

impl Dense {
    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation, has_bias: bool) -> Self {
        Self {
            in_dim,
            out_dim,
            activation,
            weights: vec![0.0; in_dim * out_dim],
            bias: if has_bias { vec![0.0; out_dim] } else { Vec::new() },
            has_bias,
        }
    }

    /// Uniform(−1/√fan_in, 1/√fan_in) for weights and bias.
    pub fn random<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        has_bias: bool,
        rng: &mut R,
    ) -> Self {
        let mut layer = Self::zeros(in_dim, out_dim, activation, has_bias);
        if in_dim > 0 {
            let limit = 1.0 / (in_dim as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit);
            for w in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                *w = dist.sample(rng);
            }
        }
        layer
    }

    pub fn from_parts(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        weights: Vec<f64>,
        bias: Option<Vec<f64>>,
    ) -> Result<Self> {
        if weights.len() != in_dim * out_dim {
            return Err(NnError::shape(format!(
                "weights have {} entries, layer is {out_dim}x{in_dim}",
                weights.len()
            )));
        }
        if let Some(b) = &bias {
            if b.len() != out_dim {
                return Err(NnError::shape(format!(
                    "bias has {} entries, expected {out_dim}",
                    b.len()
                )));
            }
        }
        Ok(Self {
            in_dim,
            out_dim,
            activation,
            weights,
            has_bias: bias.is_some(),
            bias: bias.unwrap_or_default(),
        })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn has_bias(&self) -> bool {
        self.has_bias
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }
}

/// Intermediates recorded by [`Mlp::forward`], consumed by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    /// Input to each layer; `inputs[0]` is the network input.
    inputs: Vec<Matrix>,
    pre_activations: Vec<Matrix>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.inputs.first().map_or(0, Matrix::rows)
    }

    pub fn input(&self) -> &Matrix {
        &self.inputs[0]
    }
}

#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<Dense>,
    /// Bumped on every mutable parameter access so old caches are detectable.
    version: u64,
}

/// Equal layers make equal networks; the cache version is bookkeeping.
impl PartialEq for Mlp {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

impl Mlp {
    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(NnError::shape("an MLP needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(NnError::shape(format!(
                    "layer output {} does not feed layer input {}",
                    pair[0].out_dim, pair[1].in_dim
                )));
            }
        }
        Ok(Self { layers, version: 0 })
    }

    /// `sizes = [in, h1, ..., out]`; hidden layers use `hidden`, the last uses `output`.
    pub fn random<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        Self::build(sizes, hidden, output, true, |i, o, act, bias| {
            Dense::random(i, o, act, bias, rng)
        })
    }

    pub fn zeros(sizes: &[usize], hidden: Activation, output: Activation) -> Result<Self> {
        Self::build(sizes, hidden, output, true, Dense::zeros)
    }

    /// A single bias-free linear map `in → out`.
    pub fn linear<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        Self {
            layers: vec![Dense::random(in_dim, out_dim, Activation::Identity, false, rng)],
            version: 0,
        }
    }

    fn build(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        bias: bool,
        mut make: impl FnMut(usize, usize, Activation, bool) -> Dense,
    ) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(NnError::shape("layer size list needs an input and an output"));
        }
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|l| {
                let act = if l + 1 == n { output } else { hidden };
                make(sizes[l], sizes[l + 1], act, bias)
            })
            .collect();
        Self::from_layers(layers)
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.in_dim() {
            return Err(NnError::shape(format!(
                "input has {} columns, network expects {}",
                x.cols(),
                self.in_dim()
            )));
        }
        Ok(())
    }

    fn affine(layer: &Dense, x: &Matrix) -> Matrix {
        let b = x.rows();
        let mut z = Matrix::zeros(b, layer.out_dim);
        if layer.has_bias {
            for r in 0..b {
                z.row_mut(r).copy_from_slice(&layer.bias);
            }
        }
        gemm_a_bt(
            x.as_slice(),
            &layer.weights,
            z.as_mut_slice(),
            b,
            layer.in_dim,
            layer.out_dim,
            if layer.has_bias { 1.0 } else { 0.0 },
        );
        z
    }

    /// Batched forward pass without recording intermediates.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let mut h = x.clone();
        for layer in &self.layers {
            let mut z = Self::affine(layer, &h);
            if layer.activation != Activation::Identity {
                z.as_mut_slice()
                    .iter_mut()
                    .for_each(|v| *v = layer.activation.apply(*v));
            }
            h = z;
        }
        Ok(h)
    }

    pub fn predict_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.predict(&Matrix::row_vector(x))?.into_vec())
    }

    /// Batched forward pass that records what [`Mlp::backward`] needs.
    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, ForwardCache)> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &self.layers {
            let z = Self::affine(layer, &h);
            let mut a = z.clone();
            if layer.activation != Activation::Identity {
                a.as_mut_slice()
                    .iter_mut()
                    .for_each(|v| *v = layer.activation.apply(*v));
            }
            inputs.push(h);
            pre.push(z);
            h = a;
        }
        Ok((
            h,
            ForwardCache {
                version: self.version,
                inputs,
                pre_activations: pre,
            },
        ))
    }

    /// Chain rule back from `output_grad` (dLoss/dOutput, one row per sample).
    ///
    /// Returns parameter gradients summed over the batch and the gradient with
    /// respect to the network input.
    pub fn backward(&self, cache: &ForwardCache, output_grad: &Matrix) -> Result<(MlpGrads, Matrix)> {
        if cache.version != self.version || cache.inputs.len() != self.layers.len() {
            return Err(NnError::StaleCache);
        }
        let b = cache.batch_size();
        if output_grad.rows() != b || output_grad.cols() != self.out_dim() {
            return Err(NnError::shape(format!(
                "output gradient is {}x{}, expected {b}x{}",
                output_grad.rows(),
                output_grad.cols(),
                self.out_dim()
            )));
        }
        let mut grads = MlpGrads::zeros_like(self);
        let mut upstream = output_grad.clone();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let z = &cache.pre_activations[l];
            let x = &cache.inputs[l];
            if z.rows() != b || z.cols() != layer.out_dim || x.cols() != layer.in_dim {
                return Err(NnError::StaleCache);
            }
            let mut dz = upstream;
            if layer.activation != Activation::Identity {
                for (g, &zv) in dz.as_mut_slice().iter_mut().zip(z.as_slice()) {
                    *g *= layer.activation.derivative(zv);
                }
            }
            let lg = &mut grads.layers[l];
            gemm_at_b(
                dz.as_slice(),
                x.as_slice(),
                &mut lg.weights,
                b,
                layer.out_dim,
                layer.in_dim,
                0.0,
            );
            if layer.has_bias {
                for row in dz.iter_rows() {
                    for (gb, d) in lg.bias.iter_mut().zip(row) {
                        *gb += d;
                    }
                }
            }
            let mut dx = Matrix::zeros(b, layer.in_dim);
            gemm_a_b(
                dz.as_slice(),
                &layer.weights,
                dx.as_mut_slice(),
                b,
                layer.out_dim,
                layer.in_dim,
            );
            upstream = dx;
        }
        Ok((grads, upstream))
    }

    pub fn is_finite(&self) -> bool {
        self.param_slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }
}

impl Parameterized for Mlp {
    fn param_slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
            .collect()
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.version = self.version.wrapping_add(1);
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Gradient buffer with exactly the parameter layout of an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<LayerGrads>,
}

impl MlpGrads {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        Self {
            layers: mlp
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &MlpGrads) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(NnError::shape("gradient layer counts differ"));
        }
        for (a, b) in self.param_slices_mut().into_iter().zip(other.param_slices()) {
            if a.len() != b.len() {
                return Err(NnError::shape("gradient slice lengths differ"));
            }
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for s in self.param_slices_mut() {
            s.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.param_slices().iter().all(|s| s.iter().all(|&v| v == 0.0))
    }
}

impl Parameterized for MlpGrads {
    fn param_slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
            .collect()
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SyncMode {
    #[default]
    Hard,
}

/// Copies the online parameters into the target network.
pub fn sync_target(online: &Mlp, target: &mut Mlp, mode: SyncMode) -> Result<()> {
    match mode {
        SyncMode::Hard => {
            let shapes_match = online.layers.len() == target.layers.len()
                && online.layers.iter().zip(&target.layers).all(|(a, b)| {
                    a.in_dim == b.in_dim && a.out_dim == b.out_dim && a.has_bias == b.has_bias
                });
            if !shapes_match {
                return Err(NnError::shape("online and target networks differ in shape"));
            }
            let version = target.version.wrapping_add(1);
            target.layers.clone_from(&online.layers);
            target.version = version;
            Ok(())
        }
    }
}
