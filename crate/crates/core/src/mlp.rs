//! Fully connected network mapping normalised `(t, μ)` to normalised reduced
//! coefficients, trained with Adam on mini-batches.

use std::time::Instant;

use log::debug;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

impl Activation {
    pub fn id(self) -> u8 {
        match self {
            Activation::Tanh => 0,
            Activation::Relu => 1,
        }
    }

    pub fn from_id(id: u8) -> Result<Activation> {
        match id {
            0 => Ok(Activation::Tanh),
            1 => Ok(Activation::Relu),
            _ => Err(Error::Format(format!("unknown activation id {id}"))),
        }
    }

    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the activation value `a`.
    fn slope(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Affine layer; `w` is `n_out × n_in`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub n_in: usize,
    pub n_out: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Layer {
    fn zeros(n_in: usize, n_out: usize) -> Layer {
        Layer { n_in, n_out, w: vec![0.0; n_in * n_out], b: vec![0.0; n_out] }
    }

    fn affine(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.n_out {
            let row = &self.w[o * self.n_in..(o + 1) * self.n_in];
            out.push(self.b[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>());
        }
    }
}

/// Hidden layers use `activation`; the output layer is affine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
    pub activation: Activation,
    /// Seed of the initial weights.
    pub seed: u64,
}

impl Mlp {
    /// `n_hl` hidden layers of `n_nn` neurons; Glorot-uniform weights, zero
    /// biases.
    pub fn new(n_hl: usize, n_nn: usize, in_dim: usize, out_dim: usize, seed: u64) -> Result<Mlp> {
        Self::with_activation(n_hl, n_nn, in_dim, out_dim, seed, Activation::Tanh)
    }

    pub fn with_activation(
        n_hl: usize,
        n_nn: usize,
        in_dim: usize,
        out_dim: usize,
        seed: u64,
        activation: Activation,
    ) -> Result<Mlp> {
        if in_dim == 0 || out_dim == 0 || (n_hl > 0 && n_nn == 0) {
            return Err(Error::InvalidParameter("network dimensions must be at least 1".into()));
        }
        let mut sizes = vec![in_dim];
        sizes.extend(std::iter::repeat_n(n_nn, n_hl));
        sizes.push(out_dim);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = sizes
            .windows(2)
            .map(|s| {
                let limit = (6.0 / (s[0] + s[1]) as f64).sqrt();
                let mut l = Layer::zeros(s[0], s[1]);
                for w in l.w.iter_mut() {
                    *w = rng.random_range(-limit..=limit);
                }
                l
            })
            .collect();
        Ok(Mlp { layers, activation, seed })
    }

    /// `[in, hidden…, out]`.
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].n_in];
        s.extend(self.layers.iter().map(|l| l.n_out));
        s
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("at least one layer").n_out
    }

    pub fn n_weights(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        ensure_len(self.in_dim(), x.len())?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network input"));
        }
        Ok(self.activations(x).pop().expect("output layer"))
    }

    /// Inputs of every layer followed by the output.
    fn activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::with_capacity(layer.n_out);
            layer.affine(&acts[k], &mut z);
            if k < last {
                for v in z.iter_mut() {
                    *v = self.activation.apply(*v);
                }
            }
            acts.push(z);
        }
        acts
    }

    /// Mean of `(ŷ - y)²` over rows and outputs.
    pub fn loss(&self, xs: &[Vec<f64>], ys: &[Vec<f64>]) -> f64 {
        let idx: Vec<usize> = (0..xs.len()).collect();
        self.loss_on(xs, ys, &idx)
    }

    fn loss_on(&self, xs: &[Vec<f64>], ys: &[Vec<f64>], idx: &[usize]) -> f64 {
        if idx.is_empty() {
            return 0.0;
        }
        let mut s = 0.0;
        for &i in idx {
            let out = self.activations(&xs[i]).pop().expect("output layer");
            s += out.iter().zip(&ys[i]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
        s / (idx.len() * self.out_dim()) as f64
    }

    /// Loss and its gradient over the rows `idx`, laid out like the layers.
    pub fn loss_gradient(&self, xs: &[Vec<f64>], ys: &[Vec<f64>], idx: &[usize]) -> (f64, Vec<Layer>) {
        let mut grad: Vec<Layer> = self.layers.iter().map(|l| Layer::zeros(l.n_in, l.n_out)).collect();
        let scale = 1.0 / (idx.len() * self.out_dim()) as f64;
        let mut loss = 0.0;
        let last = self.layers.len() - 1;
        for &i in idx {
            let acts = self.activations(&xs[i]);
            let out = &acts[last + 1];
            let mut delta: Vec<f64> = out.iter().zip(&ys[i]).map(|(a, b)| a - b).collect();
            loss += delta.iter().map(|d| d * d).sum::<f64>();
            for d in delta.iter_mut() {
                *d *= 2.0 * scale;
            }
            for k in (0..=last).rev() {
                let layer = &self.layers[k];
                let input = &acts[k];
                let g = &mut grad[k];
                for o in 0..layer.n_out {
                    g.b[o] += delta[o];
                    let row = &mut g.w[o * layer.n_in..(o + 1) * layer.n_in];
                    for (gw, a) in row.iter_mut().zip(input) {
                        *gw += delta[o] * a;
                    }
                }
                if k > 0 {
                    let mut back = vec![0.0; layer.n_in];
                    for o in 0..layer.n_out {
                        let row = &layer.w[o * layer.n_in..(o + 1) * layer.n_in];
                        for (bk, w) in back.iter_mut().zip(row) {
                            *bk += delta[o] * w;
                        }
                    }
                    for (bk, a) in back.iter_mut().zip(input) {
                        *bk *= self.activation.slope(*a);
                    }
                    delta = back;
                }
            }
        }
        (loss * scale, grad)
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(|l| l.w.iter_mut().chain(l.b.iter_mut()))
    }

    fn all_finite(&self) -> bool {
        self.layers.iter().all(|l| l.w.iter().chain(&l.b).all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Share of rows held out for validation.
    pub validation_fraction: f64,
    /// Seeds the split and the mini-batch shuffles.
    pub seed: u64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings { epochs: 20_000, batch_size: 32, learning_rate: 1e-3, validation_fraction: 0.2, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub validation_loss: Vec<f64>,
    /// 0-based epoch of the returned weights.
    pub best_epoch: usize,
    pub best_validation_loss: f64,
    /// Number of times the checkpoint was replaced.
    pub checkpoints: usize,
    pub n_train: usize,
    pub n_validation: usize,
    pub seconds: f64,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Adam {
        Adam { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, net: &mut Mlp, grad: &[Layer], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        let grads = grad.iter().flat_map(|l| l.w.iter().chain(&l.b));
        for (((p, g), m), v) in net.params_mut().zip(grads).zip(self.m.iter_mut()).zip(self.v.iter_mut()) {
            *m = Self::B1 * *m + (1.0 - Self::B1) * g;
            *v = Self::B2 * *v + (1.0 - Self::B2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
        }
    }
}

/// Seeded split into (training, validation) row indices.
pub fn split_rows(n: usize, validation_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(validation_fraction > 0.0 && validation_fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "validation fraction must lie in (0, 1), got {validation_fraction}"
        )));
    }
    if n < 2 {
        return Err(Error::InvalidParameter("training needs at least two rows".into()));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = ((n as f64 * validation_fraction).round() as usize).clamp(1, n - 1);
    let val = idx.split_off(n - n_val);
    Ok((idx, val))
}

/// Adam on shuffled mini-batches for every epoch; returns the weights with
/// the lowest validation loss seen.
pub fn train(init: &Mlp, xs: &[Vec<f64>], ys: &[Vec<f64>], settings: &TrainSettings) -> Result<(Mlp, TrainReport)> {
    ensure_len(xs.len(), ys.len())?;
    if xs.is_empty() {
        return Err(Error::InvalidParameter("empty training table".into()));
    }
    for (x, y) in xs.iter().zip(ys) {
        ensure_len(init.in_dim(), x.len())?;
        ensure_len(init.out_dim(), y.len())?;
        if x.iter().chain(y).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("training table"));
        }
    }
    if settings.batch_size == 0 || !(settings.learning_rate > 0.0) {
        return Err(Error::InvalidParameter("batch size and learning rate must be positive".into()));
    }
    let start = Instant::now();
    let (mut train_idx, val_idx) = split_rows(xs.len(), settings.validation_fraction, settings.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed.wrapping_add(1));
    let mut net = init.clone();
    let mut adam = Adam::new(net.n_weights());
    let mut best = net.clone();
    let mut best_loss = f64::INFINITY;
    let mut best_epoch = 0;
    let mut checkpoints = 0;
    let mut train_loss = Vec::with_capacity(settings.epochs);
    let mut validation_loss = Vec::with_capacity(settings.epochs);
    for epoch in 0..settings.epochs {
        train_idx.shuffle(&mut rng);
        for batch in train_idx.chunks(settings.batch_size) {
            let (_, grad) = net.loss_gradient(xs, ys, batch);
            adam.step(&mut net, &grad, settings.learning_rate);
        }
        let tl = net.loss_on(xs, ys, &train_idx);
        let vl = net.loss_on(xs, ys, &val_idx);
        if !tl.is_finite() || !vl.is_finite() || !net.all_finite() {
            return Err(Error::TrainingDiverged { epoch, loss: tl });
        }
        if vl < best_loss {
            best_loss = vl;
            best_epoch = epoch;
            best.clone_from(&net);
            checkpoints += 1;
        }
        train_loss.push(tl);
        validation_loss.push(vl);
    }
    debug!("trained {} epochs; best validation {best_loss:e} at epoch {best_epoch}", settings.epochs);
    let report = TrainReport {
        train_loss,
        validation_loss,
        best_epoch,
        best_validation_loss: best_loss,
        checkpoints,
        n_train: train_idx.len(),
        n_validation: val_idx.len(),
        seconds: start.elapsed().as_secs_f64(),
    };
    Ok((best, report))
}
