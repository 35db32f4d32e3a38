//! Minimal dense neural machinery: matrix/vector kernels, MLP forward and
//! exact reverse-mode backward over a per-example tape, binary cross-entropy,
//! and Adam.
//!
//! Everything is plain `f64` on the heap. Forward passes on frozen
//! parameters are safe to run from any number of threads; gradient
//! accumulation and optimizer steps are single-threaded by contract, with
//! per-example gradients reduced in a fixed order so results do not depend
//! on the worker count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative as a function of the pre-activation.
    #[inline]
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
            Activation::Sigmoid => {
                let s = sigmoid(pre);
                s * (1.0 - s)
            }
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `out = W x`
    pub fn matvec(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.cols)) {
            *o = row.iter().zip(x).map(|(w, xi)| w * xi).sum();
        }
    }

    /// `out += W^T g`
    pub fn matvec_transpose_add(&self, g: &[f64], out: &mut [f64]) {
        debug_assert_eq!(g.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (&gr, row) in g.iter().zip(self.data.chunks_exact(self.cols)) {
            for (o, w) in out.iter_mut().zip(row) {
                *o += w * gr;
            }
        }
    }

    /// `W += g x^T`
    pub fn add_outer(&mut self, g: &[f64], x: &[f64]) {
        debug_assert_eq!(g.len(), self.rows);
        debug_assert_eq!(x.len(), self.cols);
        for (&gr, row) in g.iter().zip(self.data.chunks_exact_mut(self.cols)) {
            for (w, xi) in row.iter_mut().zip(x) {
                *w += gr * xi;
            }
        }
    }
}

/// One affine layer with an activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    /// He-uniform init for relu layers, Xavier-uniform otherwise. Biases
    /// draw from a fan-in-scaled uniform: a zero bias would leave relu
    /// units fed by zero-padded inputs exactly at the kink, where the
    /// gradient is ill-defined.
    pub fn seeded(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut ChaCha12Rng) -> Self {
        let limit = match activation {
            Activation::Relu => (6.0 / in_dim as f64).sqrt(),
            _ => (6.0 / (in_dim + out_dim) as f64).sqrt(),
        };
        let mut weights = Matrix::zeros(out_dim, in_dim);
        for w in &mut weights.data {
            *w = rng.random_range(-limit..limit);
        }
        let b_limit = 1.0 / (in_dim as f64).sqrt();
        let bias = (0..out_dim).map(|_| rng.random_range(-b_limit..b_limit)).collect();
        DenseLayer { weights, bias, activation }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.cols
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows
    }
}

/// Layer sizes and activations describing an MLP. `sizes` chains input
/// through hidden widths to the output; `activations` has one entry per
/// layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub sizes: Vec<usize>,
    pub activations: Vec<Activation>,
}

impl MlpSpec {
    pub fn new(sizes: Vec<usize>, activations: Vec<Activation>) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::Config("an MLP needs at least input and output sizes".into()));
        }
        if activations.len() != sizes.len() - 1 {
            return Err(Error::Config(format!(
                "{} activations for {} layers",
                activations.len(),
                sizes.len() - 1
            )));
        }
        if sizes.contains(&0) {
            return Err(Error::Config("zero-width MLP layer".into()));
        }
        Ok(MlpSpec { sizes, activations })
    }

    /// Hidden widths all `relu`, final layer `last`.
    pub fn with_hidden(in_dim: usize, hidden: &[usize], out_dim: usize, last: Activation) -> Result<Self> {
        let mut sizes = vec![in_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(out_dim);
        let mut acts = vec![Activation::Relu; hidden.len()];
        acts.push(last);
        MlpSpec::new(sizes, acts)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
}

/// Cached activations from one forward pass, sufficient for an exact
/// backward pass.
#[derive(Debug, Clone)]
pub struct MlpTape {
    /// Input to each layer (inputs[0] is the network input).
    inputs: Vec<Vec<f64>>,
    /// Pre-activation values of each layer.
    preacts: Vec<Vec<f64>>,
}

/// Parameter gradients mirroring an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub weights: Vec<Matrix>,
    pub bias: Vec<Vec<f64>>,
}

impl MlpGrads {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        MlpGrads {
            weights: mlp
                .layers
                .iter()
                .map(|l| Matrix::zeros(l.out_dim(), l.in_dim()))
                .collect(),
            bias: mlp.layers.iter().map(|l| vec![0.0; l.out_dim()]).collect(),
        }
    }

    pub fn add(&mut self, other: &MlpGrads) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += y;
            }
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, f: f64) {
        for m in &mut self.weights {
            for x in &mut m.data {
                *x *= f;
            }
        }
        for b in &mut self.bias {
            for x in b {
                *x *= f;
            }
        }
    }
}

impl Mlp {
    pub fn from_spec(spec: &MlpSpec, seed: u64) -> Result<Self> {
        MlpSpec::new(spec.sizes.clone(), spec.activations.clone())?;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let layers = (0..spec.sizes.len() - 1)
            .map(|i| DenseLayer::seeded(spec.sizes[i], spec.sizes[i + 1], spec.activations[i], &mut rng))
            .collect();
        Ok(Mlp { layers })
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map(|l| l.in_dim()).unwrap_or(0)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map(|l| l.out_dim()).unwrap_or(0)
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.data.len() + l.bias.len())
            .sum()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut cur = x.to_vec();
        for layer in &self.layers {
            let mut out = vec![0.0; layer.out_dim()];
            layer.weights.matvec(&cur, &mut out);
            for (o, b) in out.iter_mut().zip(&layer.bias) {
                *o = layer.activation.apply(*o + b);
            }
            cur = out;
        }
        Ok(cur)
    }

    pub fn forward_tape(&self, x: &[f64]) -> Result<(Vec<f64>, MlpTape)> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut preacts = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_vec();
        for layer in &self.layers {
            let mut pre = vec![0.0; layer.out_dim()];
            layer.weights.matvec(&cur, &mut pre);
            for (p, b) in pre.iter_mut().zip(&layer.bias) {
                *p += b;
            }
            let out = pre.iter().map(|&p| layer.activation.apply(p)).collect();
            inputs.push(cur);
            preacts.push(pre);
            cur = out;
        }
        Ok((cur, MlpTape { inputs, preacts }))
    }

    /// Exact reverse pass. Accumulates parameter gradients into `grads` and
    /// returns the gradient with respect to the network input.
    pub fn backward(&self, tape: &MlpTape, dl_dy: &[f64], grads: &mut MlpGrads) -> Result<Vec<f64>> {
        if tape.inputs.len() != self.layers.len()
            || tape
                .inputs
                .iter()
                .zip(&self.layers)
                .any(|(i, l)| i.len() != l.in_dim())
            || tape
                .preacts
                .iter()
                .zip(&self.layers)
                .any(|(p, l)| p.len() != l.out_dim())
        {
            return Err(Error::Shape("tape does not match this network".into()));
        }
        if dl_dy.len() != self.out_dim() {
            return Err(Error::Shape(format!(
                "upstream gradient has {} components, output has {}",
                dl_dy.len(),
                self.out_dim()
            )));
        }
        let mut up = dl_dy.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let pre = &tape.preacts[l];
            let mut dpre = vec![0.0; layer.out_dim()];
            for i in 0..layer.out_dim() {
                dpre[i] = up[i] * layer.activation.derivative(pre[i]);
            }
            grads.weights[l].add_outer(&dpre, &tape.inputs[l]);
            for (gb, dp) in grads.bias[l].iter_mut().zip(&dpre) {
                *gb += dp;
            }
            let mut down = vec![0.0; layer.in_dim()];
            layer.weights.matvec_transpose_add(&dpre, &mut down);
            up = down;
        }
        Ok(up)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.in_dim() {
            return Err(Error::Shape(format!(
                "input has {} components, network expects {}",
                x.len(),
                self.in_dim()
            )));
        }
        Ok(())
    }

    /// Flat `(params, grads)` views over every tensor, in layer order, for
    /// feeding an optimizer.
    pub fn tensors_mut<'a>(&'a mut self, grads: &'a MlpGrads) -> Vec<(&'a mut [f64], &'a [f64])> {
        self.layers
            .iter_mut()
            .zip(grads.weights.iter().zip(&grads.bias))
            .flat_map(|(layer, (gw, gb))| {
                let DenseLayer { weights, bias, .. } = layer;
                [
                    (weights.data.as_mut_slice(), gw.data.as_slice()),
                    (bias.as_mut_slice(), gb.as_slice()),
                ]
            })
            .collect()
    }

    /// All parameters flattened into one vector, matching
    /// [`Mlp::set_flat_params`]. Used by checkpointing and gradient checks.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weights.data);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "{} flat parameters for a network with {}",
                flat.len(),
                self.param_count()
            )));
        }
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weights.data.len();
            l.weights.data.copy_from_slice(&flat[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[off..off + nb]);
            off += nb;
        }
        Ok(())
    }
}

/// Binary cross-entropy of a predicted probability against a binary label,
/// with the probability clamped away from 0 and 1. Returns the loss and
/// `dloss/dp`; the gradient is zero in the clamped regions.
pub fn bce_loss(p: f64, positive: bool) -> (f64, f64) {
    let y = if positive { 1.0 } else { 0.0 };
    let pc = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
    let loss = -(y * pc.ln() + (1.0 - y) * (1.0 - pc).ln());
    let grad = if p <= BCE_CLAMP || p >= 1.0 - BCE_CLAMP {
        0.0
    } else {
        (pc - y) / (pc * (1.0 - pc))
    };
    (loss, grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, ..Default::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone)]
struct AdamSlot {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Adam with bias correction. Slots are allocated per parameter tensor on
/// the first step, in traversal order, and shapes must stay fixed.
#[derive(Debug, Clone)]
pub struct Adam {
    pub cfg: AdamConfig,
    step: u64,
    slots: Vec<AdamSlot>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam { cfg, step: 0, slots: Vec::new() }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over `(name, params, grads)` tensors. Non-finite gradients
    /// abort, naming the offending block.
    pub fn step(&mut self, mut tensors: Vec<(&str, &mut [f64], &[f64])>) -> Result<()> {
        if self.slots.is_empty() {
            self.slots = tensors
                .iter()
                .map(|(_, p, _)| AdamSlot { m: vec![0.0; p.len()], v: vec![0.0; p.len()] })
                .collect();
        }
        if self.slots.len() != tensors.len() {
            return Err(Error::Shape("optimizer saw a different tensor list".into()));
        }
        for ((name, params, grads), slot) in tensors.iter().zip(&self.slots) {
            if params.len() != grads.len() || params.len() != slot.m.len() {
                return Err(Error::Shape(format!("parameter block {name} changed shape")));
            }
            if grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of parameter block {name}")));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.cfg.beta1.powi(t);
        let c2 = 1.0 - self.cfg.beta2.powi(t);
        for ((_, params, grads), slot) in tensors.iter_mut().zip(&mut self.slots) {
            for i in 0..params.len() {
                let g = grads[i];
                slot.m[i] = self.cfg.beta1 * slot.m[i] + (1.0 - self.cfg.beta1) * g;
                slot.v[i] = self.cfg.beta2 * slot.v[i] + (1.0 - self.cfg.beta2) * g * g;
                let mh = slot.m[i] / c1;
                let vh = slot.v[i] / c2;
                params[i] -= self.cfg.lr * mh / (vh.sqrt() + self.cfg.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_layer_passes_through() {
        let mlp = Mlp {
            layers: vec![DenseLayer {
                weights: Matrix::identity(3),
                bias: vec![0.0; 3],
                activation: Activation::Identity,
            }],
        };
        let x = vec![0.5, -1.0, 2.0];
        assert_eq!(mlp.forward(&x).unwrap(), x);
    }

    #[test]
    fn activation_values() {
        assert_eq!(Activation::Sigmoid.apply(0.0), 0.5);
        assert_eq!(Activation::Relu.apply(-1.0), 0.0);
        assert_eq!(Activation::Relu.apply(2.0), 2.0);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let spec = MlpSpec::with_hidden(3, &[4], 2, Activation::Identity).unwrap();
        let mlp = Mlp::from_spec(&spec, 0).unwrap();
        assert!(mlp.forward(&[1.0, 2.0]).is_err());
        let (_, tape) = mlp.forward_tape(&[1.0, 2.0, 3.0]).unwrap();
        assert!(mlp.backward(&tape, &[1.0, 2.0, 3.0], &mut MlpGrads::zeros_like(&mlp)).is_err());
    }

    #[test]
    fn stale_tape_rejected() {
        let a = Mlp::from_spec(&MlpSpec::with_hidden(3, &[4], 2, Activation::Identity).unwrap(), 0).unwrap();
        let b = Mlp::from_spec(&MlpSpec::with_hidden(3, &[5], 2, Activation::Identity).unwrap(), 0).unwrap();
        let (_, tape) = a.forward_tape(&[1.0, 2.0, 3.0]).unwrap();
        assert!(b.backward(&tape, &[1.0, 0.0], &mut MlpGrads::zeros_like(&b)).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let spec = MlpSpec::with_hidden(3, &[4], 2, Activation::Sigmoid).unwrap();
        let mlp = Mlp::from_spec(&spec, 1).unwrap();
        let (_, tape) = mlp.forward_tape(&[0.3, -0.2, 0.9]).unwrap();
        let mut grads = MlpGrads::zeros_like(&mlp);
        let dx = mlp.backward(&tape, &[0.0, 0.0], &mut grads).unwrap();
        assert!(dx.iter().all(|&g| g == 0.0));
        assert!(grads.weights.iter().all(|m| m.data.iter().all(|&g| g == 0.0)));
    }

    #[test]
    fn scalar_linear_layer_gradient_by_hand() {
        // y = w x + b, upstream dl/dy = u: dl/dw = u x, dl/db = u, dl/dx = u w.
        let mlp = Mlp {
            layers: vec![DenseLayer {
                weights: Matrix { rows: 1, cols: 1, data: vec![3.0] },
                bias: vec![0.5],
                activation: Activation::Identity,
            }],
        };
        let (_, tape) = mlp.forward_tape(&[2.0]).unwrap();
        let mut grads = MlpGrads::zeros_like(&mlp);
        let dx = mlp.backward(&tape, &[7.0], &mut grads).unwrap();
        assert_eq!(grads.weights[0].data[0], 14.0);
        assert_eq!(grads.bias[0][0], 7.0);
        assert_eq!(dx[0], 21.0);
    }

    #[test]
    fn bce_values_and_gradient() {
        let (loss, _) = bce_loss(0.5, true);
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
        let (loss, grad) = bce_loss(1.0, true);
        assert!(loss < 1e-6);
        assert_eq!(grad, 0.0);
        // Central finite difference at p = 0.3, label 0.
        let (_, g) = bce_loss(0.3, false);
        let h = 1e-7;
        let fd = (bce_loss(0.3 + h, false).0 - bce_loss(0.3 - h, false).0) / (2.0 * h);
        assert!((g - fd).abs() < 1e-6);
    }

    #[test]
    fn adam_zero_gradients_leave_params_unchanged() {
        let mut adam = Adam::new(AdamConfig::default());
        let mut p = vec![1.0, -2.0, 3.0];
        let orig = p.clone();
        for _ in 0..5 {
            adam.step(vec![("p", &mut p, &[0.0, 0.0, 0.0])]).unwrap();
        }
        assert_eq!(p, orig);
    }

    #[test]
    fn adam_first_step_is_minus_lr() {
        let cfg = AdamConfig { lr: 0.01, ..Default::default() };
        let mut adam = Adam::new(cfg);
        let mut p = vec![0.0];
        adam.step(vec![("p", &mut p, &[1.0])]).unwrap();
        // Step 1 with g = 1: mhat = 1, vhat = 1, delta = -lr / (1 + eps).
        assert!((p[0] + 0.01).abs() < 1e-9);
    }

    #[test]
    fn adam_rejects_non_finite_gradient() {
        let mut adam = Adam::new(AdamConfig::default());
        let mut p = vec![1.0];
        let err = adam.step(vec![("blockname", &mut p, &[f64::NAN])]).unwrap_err();
        assert!(err.to_string().contains("blockname"));
    }

    #[test]
    fn adam_deterministic() {
        let run = || {
            let mut adam = Adam::new(AdamConfig::with_lr(0.05));
            let mut p = vec![0.2, -0.4];
            for i in 0..50 {
                let g = [(i as f64 * 0.1).sin(), (i as f64 * 0.2).cos()];
                adam.step(vec![("p", &mut p, &g)]).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn training_smoke_halves_bce() {
        for seed in [5u64, 6, 7] {
            let spec = MlpSpec::with_hidden(4, &[16], 1, Activation::Sigmoid).unwrap();
            let mut mlp = Mlp::from_spec(&spec, seed).unwrap();
            let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0xABCD);
            let data: Vec<(Vec<f64>, bool)> = (0..32)
                .map(|_| {
                    let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
                    (x, rng.random::<bool>())
                })
                .collect();
            let eval = |mlp: &Mlp| -> f64 {
                data.iter()
                    .map(|(x, y)| bce_loss(mlp.forward(x).unwrap()[0], *y).0)
                    .sum::<f64>()
                    / data.len() as f64
            };
            let before = eval(&mlp);
            let mut adam = Adam::new(AdamConfig::with_lr(0.05));
            for _ in 0..200 {
                let mut grads = MlpGrads::zeros_like(&mlp);
                for (x, y) in &data {
                    let (out, tape) = mlp.forward_tape(x).unwrap();
                    let (_, dp) = bce_loss(out[0], *y);
                    mlp.backward(&tape, &[dp / data.len() as f64], &mut grads).unwrap();
                }
                let tensors = mlp
                    .tensors_mut(&grads)
                    .into_iter()
                    .map(|(p, g)| ("mlp", p, g))
                    .collect();
                adam.step(tensors).unwrap();
            }
            let after = eval(&mlp);
            assert!(after <= 0.5 * before, "seed {seed}: {before} -> {after}");
        }
    }
}
