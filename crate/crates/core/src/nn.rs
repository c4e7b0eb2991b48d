//! Small dense-network building blocks with hand-written backpropagation,
//! shared by the feature network and the MLP baseline.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TlmError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    LeakyRelu { slope: f64 },
}

impl Activation {
    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        match *self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu { slope } => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
        }
    }

    /// Derivative at `x`; ReLU kinks take the left derivative.
    #[inline]
    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu { slope } => {
                if x > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
        }
    }
}

/// Fully connected layer `out = act(W x + b)`, `W` stored row-major
/// `outputs × inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
            activation,
        }
    }

    /// Weights drawn from `Normal(0, sd)`, zero bias.
    pub fn normal(inputs: usize, outputs: usize, activation: Activation, sd: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut layer = Self::zeros(inputs, outputs, activation);
        if sd > 0.0 {
            let dist = Normal::new(0.0, sd).expect("finite positive sd");
            layer.weights.iter_mut().for_each(|w| *w = dist.sample(rng));
        }
        layer
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub(crate) fn check(&self) -> Result<()> {
        if self.weights.len() != self.inputs * self.outputs || self.bias.len() != self.outputs {
            return Err(TlmError::Format(format!(
                "layer {}x{} has {} weights and {} biases",
                self.outputs,
                self.inputs,
                self.weights.len(),
                self.bias.len()
            )));
        }
        if self.weights.iter().chain(&self.bias).any(|v| !v.is_finite()) {
            return Err(TlmError::Format("layer holds non-finite parameters".into()));
        }
        Ok(())
    }

    /// Pre-activation `W x + b`.
    pub fn linear(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.inputs)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }

    /// Accumulates parameter gradients for upstream gradient `delta` (w.r.t.
    /// the pre-activation) and input `x`; returns the gradient w.r.t. `x`.
    pub(crate) fn backward(&self, x: &[f64], delta: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let (gw, gb) = grad.split_at_mut(self.weights.len());
        let mut gx = vec![0.0; self.inputs];
        for (o, &dl) in delta.iter().enumerate() {
            if dl == 0.0 {
                continue;
            }
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            let grow = &mut gw[o * self.inputs..(o + 1) * self.inputs];
            for ((g, &xi), (&w, gxi)) in grow.iter_mut().zip(x).zip(row.iter().zip(gx.iter_mut())) {
                *g += dl * xi;
                *gxi += dl * w;
            }
            gb[o] += dl;
        }
        gx
    }

    pub(crate) fn write_params(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.weights);
        out.extend_from_slice(&self.bias);
    }

    pub(crate) fn read_params(&mut self, p: &[f64]) -> usize {
        let nw = self.weights.len();
        self.weights.copy_from_slice(&p[..nw]);
        self.bias.copy_from_slice(&p[nw..nw + self.outputs]);
        nw + self.outputs
    }
}

/// Inverted dropout: keep with probability `1 − rate`, scale kept units by
/// `1 / (1 − rate)`.
pub(crate) fn dropout_mask(len: usize, rate: f64, rng: Option<&mut ChaCha8Rng>) -> Option<Vec<f64>> {
    let rng = rng?;
    if rate <= 0.0 {
        return None;
    }
    let keep = 1.0 - rate;
    Some(
        (0..len)
            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub dropout_enabled: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 50,
            batch_size: 64,
            seed: 0,
            dropout_enabled: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TlmError::InvalidConfig("learning_rate must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(TlmError::InvalidConfig("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Plain minibatch gradient descent over `n_rows` rows.
///
/// `loss(params)` scores the whole dataset in evaluation mode;
/// `batch_gradient(params, rows, rng)` returns the gradient of the loss over
/// `rows`. Returns the loss before training and after every epoch.
pub(crate) fn minibatch_descent<L, G>(
    params: &mut [f64],
    n_rows: usize,
    cfg: &TrainConfig,
    mut loss: L,
    mut batch_gradient: G,
) -> Result<Vec<f64>>
where
    L: FnMut(&[f64]) -> f64,
    G: FnMut(&[f64], &[usize], &mut ChaCha8Rng) -> Vec<f64>,
{
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let initial = loss(params);
    if !initial.is_finite() {
        return Err(TlmError::Divergence { epoch: 0 });
    }
    let mut curve = vec![initial];
    let mut order: Vec<usize> = (0..n_rows).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let grad = batch_gradient(params, batch, &mut rng);
            for (p, g) in params.iter_mut().zip(&grad) {
                *p -= cfg.learning_rate * g;
            }
        }
        let value = loss(params);
        if !value.is_finite() {
            return Err(TlmError::Divergence { epoch });
        }
        curve.push(value);
    }
    Ok(curve)
}

/// Central-difference gradient of `f` at `x`, for gradient checks.
pub fn finite_difference<F: FnMut(&[f64]) -> f64>(x: &[f64], h: f64, mut f: F) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest `|a − b| / max(|a|, |b|, floor)` over paired entries.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}
