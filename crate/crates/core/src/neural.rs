//! Multilayer perceptron classifier.
//!
//! One hidden layer gives the shallow ANN, more give the DNN. Training is
//! minibatch backpropagation with Adam or Adadelta.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::data::{
    derive_seed, normalize, rng_from_seed, Classifier, LabeledDataset, Learner, ScalerState, ScalingKind, NUM_CLASSES,
};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputActivation {
    #[default]
    Softmax,
    /// One-vs-all sigmoids, renormalized to sum to 1 at prediction time.
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Initializer {
    #[default]
    GlorotUniform,
    /// U(-0.05, 0.05).
    Uniform,
    /// N(0, 0.05).
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    #[default]
    Adam,
    Adadelta,
}

impl Optimizer {
    pub fn default_learning_rate(self) -> f64 {
        match self {
            Optimizer::Adam => 1e-3,
            Optimizer::Adadelta => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden_layers: usize,
    pub neurons_per_hidden: usize,
    pub hidden_activation: Activation,
    pub output_activation: OutputActivation,
    pub initializer: Initializer,
    pub dropout_rate: f64,
    /// Max L2 norm of each unit's incoming weights; 0 disables the constraint.
    pub max_norm: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: Optimizer,
    /// Overrides the optimizer's default step size.
    #[serde(default)]
    pub learning_rate: Option<f64>,
    #[serde(default)]
    pub scaling: ScalingKind,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden_layers: 1,
            neurons_per_hidden: 16,
            hidden_activation: Activation::Relu,
            output_activation: OutputActivation::Softmax,
            initializer: Initializer::GlorotUniform,
            dropout_rate: 0.0,
            max_norm: 0.0,
            batch_size: 10,
            epochs: 100,
            optimizer: Optimizer::Adam,
            learning_rate: None,
            scaling: ScalingKind::MinMax,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_layers == 0 || self.neurons_per_hidden == 0 {
            return Err(Error::config("an MLP needs at least one hidden layer with one unit"));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::config("batch_size and epochs must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config(format!("dropout_rate must be in [0,1), got {}", self.dropout_rate)));
        }
        if !(self.max_norm >= 0.0) {
            return Err(Error::config("max_norm must be non-negative"));
        }
        if let Some(lr) = self.learning_rate {
            if !(lr >= 0.0 && lr.is_finite()) {
                return Err(Error::config(format!("learning rate must be a non-negative number, got {lr}")));
            }
        }
        Ok(())
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
            .unwrap_or_else(|| self.optimizer.default_learning_rate())
    }
}

/// Dense layer; `weights[o * fan_in + i]` connects input `i` to unit `o`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct Layer<F> {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: Vec<F>,
    pub bias: Vec<F>,
}

impl<F: Scalar> Layer<F> {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Layer {
            fan_in,
            fan_out,
            weights: vec![F::zero(); fan_in * fan_out],
            bias: vec![F::zero(); fan_out],
        }
    }

    fn n_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn affine(&self, x: &[F], out: &mut Vec<F>) {
        out.clear();
        out.extend(self.weights.chunks_exact(self.fan_in).zip(&self.bias).map(|(w, &b)| {
            w.iter().zip(x).fold(b, |acc, (&wi, &xi)| acc + wi * xi)
        }));
    }
}

/// Weight matrix for a `fan_in -> fan_out` layer, laid out as in [`Layer`].
pub fn init_weights<F: Scalar>(init: Initializer, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Vec<F> {
    let n = fan_in * fan_out;
    match init {
        Initializer::GlorotUniform => {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let u = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
            (0..n).map(|_| F::of(u.sample(rng))).collect()
        }
        Initializer::Uniform => {
            let u = Uniform::new_inclusive(-0.05, 0.05).expect("finite bounds");
            (0..n).map(|_| F::of(u.sample(rng))).collect()
        }
        Initializer::Normal => {
            let g = Normal::new(0.0, 0.05).expect("positive std");
            (0..n).map(|_| F::of(g.sample(rng))).collect()
        }
    }
}

/// Activations of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardTrace<F> {
    /// Input to each layer; `inputs[0]` is the feature row.
    pub inputs: Vec<Vec<F>>,
    /// Pre-activations of each layer.
    pub pre: Vec<Vec<F>>,
    /// Inverted-dropout multipliers of each hidden layer.
    pub masks: Vec<Option<Vec<F>>>,
    /// Softmax probabilities or raw sigmoid scores.
    pub output: [F; NUM_CLASSES],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct Network<F> {
    pub layers: Vec<Layer<F>>,
    pub hidden_activation: Activation,
    pub output_activation: OutputActivation,
}

fn sigmoid<F: Scalar>(z: F) -> F {
    if z >= F::zero() {
        F::one() / (F::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (F::one() + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus<F: Scalar>(z: F) -> F {
    z.max(F::zero()) + (-z.abs()).exp().ln_1p()
}

impl<F: Scalar> Network<F> {
    /// Randomly initialized network with zero biases.
    pub fn new(
        input: usize,
        cfg: &MlpConfig,
        rng: &mut impl Rng,
    ) -> Self {
        let mut dims = vec![input];
        dims.extend(std::iter::repeat_n(cfg.neurons_per_hidden, cfg.hidden_layers));
        dims.push(NUM_CLASSES);
        let layers = dims
            .windows(2)
            .map(|w| Layer {
                fan_in: w[0],
                fan_out: w[1],
                weights: init_weights(cfg.initializer, w[0], w[1], rng),
                bias: vec![F::zero(); w[1]],
            })
            .collect();
        Network {
            layers,
            hidden_activation: cfg.hidden_activation,
            output_activation: cfg.output_activation,
        }
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(Layer::n_params).sum()
    }

    /// All weights then biases, layer by layer.
    pub fn parameters(&self) -> Vec<F> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn set_parameters(&mut self, params: &[F]) -> Result<()> {
        if params.len() != self.n_params() {
            return Err(Error::DimensionMismatch {
                expected: self.n_params(),
                actual: params.len(),
            });
        }
        for (p, v) in self.params_mut().zip(params) {
            *p = *v;
        }
        Ok(())
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut F> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    fn activate(&self, z: F) -> F {
        match self.hidden_activation {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(F::zero()),
        }
    }

    fn activate_grad(&self, z: F) -> F {
        match self.hidden_activation {
            Activation::Tanh => {
                let t = z.tanh();
                F::one() - t * t
            }
            Activation::Relu => {
                if z > F::zero() {
                    F::one()
                } else {
                    F::zero()
                }
            }
        }
    }

    /// Forward pass. `dropout` supplies the rate and the mask RNG for a
    /// training pass; `None` is inference.
    pub fn forward_trace<R: Rng>(&self, x: &[F], mut dropout: Option<(f64, &mut R)>) -> Result<ForwardTrace<F>> {
        if x.len() != self.input_width() {
            return Err(Error::DimensionMismatch {
                expected: self.input_width(),
                actual: x.len(),
            });
        }
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n);
        let mut masks = Vec::with_capacity(n - 1);
        let mut a = x.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::with_capacity(layer.fan_out);
            layer.affine(&a, &mut z);
            inputs.push(a);
            if l + 1 < n {
                let mut next: Vec<F> = z.iter().map(|&v| self.activate(v)).collect();
                let mask = match dropout.as_mut() {
                    Some((rate, rng)) if *rate > 0.0 => {
                        let keep = F::of(1.0 / (1.0 - *rate));
                        let m: Vec<F> = (0..next.len())
                            .map(|_| if rng.random::<f64>() < *rate { F::zero() } else { keep })
                            .collect();
                        for (v, k) in next.iter_mut().zip(&m) {
                            *v = *v * *k;
                        }
                        Some(m)
                    }
                    _ => None,
                };
                masks.push(mask);
                a = next;
            } else {
                a = Vec::new();
            }
            pre.push(z);
        }
        let logits = pre.last().expect("at least one layer");
        let mut output = [F::zero(); NUM_CLASSES];
        match self.output_activation {
            OutputActivation::Softmax => {
                let m = logits.iter().fold(F::neg_infinity(), |a, &b| a.max(b));
                let mut total = F::zero();
                for (o, &z) in output.iter_mut().zip(logits) {
                    *o = (z - m).exp();
                    total = total + *o;
                }
                for o in &mut output {
                    *o = *o / total;
                }
            }
            OutputActivation::Sigmoid => {
                for (o, &z) in output.iter_mut().zip(logits) {
                    *o = sigmoid(z);
                }
            }
        }
        Ok(ForwardTrace {
            inputs,
            pre,
            masks,
            output,
        })
    }

    /// Class probabilities at inference time.
    pub fn forward(&self, x: &[F]) -> Result<[F; NUM_CLASSES]> {
        let t = self.forward_trace::<rand_chacha::ChaCha8Rng>(x, None)?;
        Ok(self.probabilities(&t))
    }

    fn probabilities(&self, t: &ForwardTrace<F>) -> [F; NUM_CLASSES] {
        match self.output_activation {
            OutputActivation::Softmax => t.output,
            OutputActivation::Sigmoid => normalize(t.output),
        }
    }

    fn sample_loss(&self, t: &ForwardTrace<F>, label: usize) -> F {
        let logits = t.pre.last().expect("at least one layer");
        match self.output_activation {
            OutputActivation::Softmax => {
                let m = logits.iter().fold(F::neg_infinity(), |a, &b| a.max(b));
                let lse = m + logits.iter().map(|&z| (z - m).exp()).sum::<F>().ln();
                lse - logits[label]
            }
            OutputActivation::Sigmoid => logits
                .iter()
                .enumerate()
                .map(|(k, &z)| if k == label { softplus(z) - z } else { softplus(z) })
                .sum(),
        }
    }

    /// Adds `scale * d(loss)/d(params)` for one traced sample into `grad`.
    fn backprop(&self, t: &ForwardTrace<F>, label: usize, scale: F, grad: &mut [F]) {
        let mut delta: Vec<F> = t
            .output
            .iter()
            .enumerate()
            .map(|(k, &o)| (o - if k == label { F::one() } else { F::zero() }) * scale)
            .collect();
        let mut offset = grad.len();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            offset -= layer.n_params();
            let input = &t.inputs[l];
            let (gw, gb) = grad[offset..offset + layer.n_params()].split_at_mut(layer.weights.len());
            for (o, &d) in delta.iter().enumerate() {
                gb[o] = gb[o] + d;
                for (g, &x) in gw[o * layer.fan_in..(o + 1) * layer.fan_in].iter_mut().zip(input) {
                    *g = *g + d * x;
                }
            }
            if l == 0 {
                break;
            }
            let mut next = vec![F::zero(); layer.fan_in];
            for (o, &d) in delta.iter().enumerate() {
                for (n, &w) in next.iter_mut().zip(&layer.weights[o * layer.fan_in..(o + 1) * layer.fan_in]) {
                    *n = *n + w * d;
                }
            }
            let z = &t.pre[l - 1];
            for (i, n) in next.iter_mut().enumerate() {
                *n = *n * self.activate_grad(z[i]);
                if let Some(m) = &t.masks[l - 1] {
                    *n = *n * m[i];
                }
            }
            delta = next;
        }
    }

    /// Batch-mean loss (no dropout).
    pub fn loss(&self, rows: &[F], labels: &[usize]) -> Result<F> {
        Ok(self.loss_and_grad(rows, labels)?.0)
    }

    /// Batch-mean loss and its exact gradient, ordered as [`Self::parameters`].
    /// `rows` is row-major with the network's input width.
    pub fn loss_and_grad(&self, rows: &[F], labels: &[usize]) -> Result<(F, Vec<F>)> {
        self.loss_and_grad_with::<rand_chacha::ChaCha8Rng>(rows, labels, None)
    }

    fn loss_and_grad_with<R: Rng>(&self, rows: &[F], labels: &[usize], mut dropout: Option<(f64, &mut R)>) -> Result<(F, Vec<F>)> {
        let width = self.input_width();
        if rows.len() != labels.len() * width {
            return Err(Error::DimensionMismatch {
                expected: labels.len() * width,
                actual: rows.len(),
            });
        }
        if labels.is_empty() {
            return Err(Error::input("empty batch"));
        }
        let scale = F::one() / F::of_usize(labels.len());
        let mut grad = vec![F::zero(); self.n_params()];
        let mut loss = F::zero();
        for (x, &y) in rows.chunks_exact(width).zip(labels) {
            if y >= NUM_CLASSES {
                return Err(Error::input(format!("label {y} is outside the level set")));
            }
            let t = self.forward_trace(x, dropout.as_mut().map(|(r, g)| (*r, &mut **g)))?;
            loss = loss + self.sample_loss(&t, y) * scale;
            self.backprop(&t, y, scale, &mut grad);
        }
        Ok((loss, grad))
    }

    fn apply_max_norm(&mut self, limit: F) {
        for layer in &mut self.layers {
            for w in layer.weights.chunks_exact_mut(layer.fan_in) {
                let norm = w.iter().map(|&v| v * v).sum::<F>().sqrt();
                if norm > limit {
                    let s = limit / norm;
                    for v in w {
                        *v = *v * s;
                    }
                }
            }
        }
    }
}

enum OptState<F> {
    Adam { m: Vec<F>, v: Vec<F>, t: i32 },
    Adadelta { eg: Vec<F>, edx: Vec<F> },
}

impl<F: Scalar> OptState<F> {
    fn new(kind: Optimizer, n: usize) -> Self {
        match kind {
            Optimizer::Adam => OptState::Adam {
                m: vec![F::zero(); n],
                v: vec![F::zero(); n],
                t: 0,
            },
            Optimizer::Adadelta => OptState::Adadelta {
                eg: vec![F::zero(); n],
                edx: vec![F::zero(); n],
            },
        }
    }

    fn step<'a>(&mut self, params: impl Iterator<Item = &'a mut F>, grad: &[F], lr: F) {
        match self {
            OptState::Adam { m, v, t } => {
                let (b1, b2, eps) = (F::of(0.9), F::of(0.999), F::of(1e-8));
                *t += 1;
                let c1 = F::one() - b1.powi(*t);
                let c2 = F::one() - b2.powi(*t);
                for (i, p) in params.enumerate() {
                    let g = grad[i];
                    m[i] = b1 * m[i] + (F::one() - b1) * g;
                    v[i] = b2 * v[i] + (F::one() - b2) * g * g;
                    *p = *p - lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                }
            }
            OptState::Adadelta { eg, edx } => {
                let (rho, eps) = (F::of(0.95), F::of(1e-6));
                for (i, p) in params.enumerate() {
                    let g = grad[i];
                    eg[i] = rho * eg[i] + (F::one() - rho) * g * g;
                    let dx = -((edx[i] + eps).sqrt() / (eg[i] + eps).sqrt()) * g;
                    edx[i] = rho * edx[i] + (F::one() - rho) * dx * dx;
                    *p = *p + lr * dx;
                }
            }
        }
    }
}

/// A trained MLP with the scaler fitted on its training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct FittedMlp<F> {
    pub config: MlpConfig,
    pub network: Network<F>,
    pub scaler: ScalerState<F>,
    /// Mean training loss of each epoch.
    pub loss_trace: Vec<F>,
}

impl<F: Scalar> FittedMlp<F> {
    pub fn fit(d: &LabeledDataset<F>, cfg: &MlpConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if d.is_empty() {
            return Err(Error::input("cannot train on zero rows"));
        }
        let scaler = ScalerState::fit(d, cfg.scaling);
        let scaled = scaler.apply(d);
        let network = Network::new(d.n_cols(), cfg, &mut rng_from_seed(derive_seed(seed, 0)));
        let mut fitted = FittedMlp {
            config: *cfg,
            network,
            scaler,
            loss_trace: Vec::with_capacity(cfg.epochs),
        };
        fitted.train(&scaled, &mut rng_from_seed(derive_seed(seed, 1)))?;
        Ok(fitted)
    }

    fn train(&mut self, d: &LabeledDataset<F>, rng: &mut impl Rng) -> Result<()> {
        let cfg = self.config;
        let width = d.n_cols();
        let lr = F::of(cfg.learning_rate());
        let limit = F::of(cfg.max_norm);
        let mut opt = OptState::new(cfg.optimizer, self.network.n_params());
        let mut order: Vec<usize> = (0..d.n_rows()).collect();
        let mut rows = Vec::with_capacity(cfg.batch_size * width);
        let mut labels = Vec::with_capacity(cfg.batch_size);
        for epoch in 0..cfg.epochs {
            order.shuffle(rng);
            let mut epoch_loss = F::zero();
            for batch in order.chunks(cfg.batch_size) {
                rows.clear();
                labels.clear();
                for &i in batch {
                    rows.extend_from_slice(d.row(i));
                    labels.push(d.label(i));
                }
                let (loss, grad) = self
                    .network
                    .loss_and_grad_with(&rows, &labels, Some((cfg.dropout_rate, &mut *rng)))?;
                if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                    return Err(Error::NonFinite(format!(
                        "loss {loss} at epoch {epoch} ({:?}, learning rate {})",
                        cfg.optimizer,
                        cfg.learning_rate()
                    )));
                }
                epoch_loss = epoch_loss + loss * F::of_usize(batch.len());
                opt.step(self.network.params_mut(), &grad, lr);
                if cfg.max_norm > 0.0 {
                    self.network.apply_max_norm(limit);
                }
            }
            self.loss_trace.push(epoch_loss / F::of_usize(d.n_rows()));
        }
        Ok(())
    }
}

impl<F: Scalar> Classifier<F> for FittedMlp<F> {
    fn n_features(&self) -> usize {
        self.network.input_width()
    }

    fn predict_proba(&self, row: &[F]) -> [F; NUM_CLASSES] {
        self.network
            .forward(&self.scaler.transform(row))
            .expect("row width checked by caller")
    }
}

impl<F: Scalar> Learner<F> for MlpConfig {
    fn fit(&self, d: &LabeledDataset<F>, seed: u64) -> Result<Box<dyn Classifier<F>>> {
        Ok(Box::new(FittedMlp::fit(d, self, seed)?))
    }
}

/// Largest `|analytic - numeric| / max(1, |analytic|)` over all parameters,
/// using central differences with step `h`.
pub fn gradient_check<F: Scalar>(net: &Network<F>, rows: &[F], labels: &[usize], h: F) -> Result<F> {
    let (_, grad) = net.loss_and_grad(rows, labels)?;
    let base = net.parameters();
    let mut probe = net.clone();
    let mut worst = F::zero();
    let mut params = base.clone();
    for i in 0..base.len() {
        params[i] = base[i] + h;
        probe.set_parameters(&params)?;
        let up = probe.loss(rows, labels)?;
        params[i] = base[i] - h;
        probe.set_parameters(&params)?;
        let down = probe.loss(rows, labels)?;
        params[i] = base[i];
        let numeric = (up - down) / (h + h);
        let err = (grad[i] - numeric).abs() / grad[i].abs().max(F::one());
        worst = worst.max(err);
    }
    Ok(worst)
}
