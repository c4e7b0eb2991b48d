//! Residual feature network trained against a frozen tree.
//!
//! Each row is routed by its label through the tree; every internal node on
//! that path contributes a cross-entropy term for its classifier and every
//! node contributes a squared-error term for its regressor, all evaluated on
//! the transformed features. The loss is the plain mean of those terms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{derive_seed, Dataset};
use crate::error::{Result, TlmError};
use crate::linear::{sigmoid, softplus};
use crate::nn::{dropout_mask, minibatch_descent, Activation, Dense, TrainConfig};
use crate::tree::{TlmNode, TlmTree};

pub const LEAKY_SLOPE: f64 = 0.01;
pub const DROPOUT_RATE: f64 = 0.2;
pub const BLOCK_COUNT: usize = 2;

/// Rows per gradient work unit; partial sums are added in chunk order so
/// results do not depend on the thread count.
const GRADIENT_CHUNK: usize = 16;

/// `u + leaky(second(relu(first(u))))`, with dropout after each activation
/// while training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResidualBlock {
    pub first: Dense,
    pub second: Dense,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureNet {
    pub dim: usize,
    pub dropout: f64,
    pub blocks: Vec<ResidualBlock>,
}

struct BlockCache {
    input: Vec<f64>,
    pre1: Vec<f64>,
    mask1: Option<Vec<f64>>,
    hidden: Vec<f64>,
    pre2: Vec<f64>,
    mask2: Option<Vec<f64>>,
}

fn apply_mask(values: &mut [f64], mask: &Option<Vec<f64>>) {
    if let Some(m) = mask {
        values.iter_mut().zip(m).for_each(|(v, k)| *v *= k);
    }
}

impl FeatureNet {
    /// All-zero parameters: the identity map.
    pub fn identity(dim: usize) -> Self {
        let block = || ResidualBlock {
            first: Dense::zeros(dim, dim, Activation::Relu),
            second: Dense::zeros(dim, dim, Activation::LeakyRelu { slope: LEAKY_SLOPE }),
        };
        Self {
            dim,
            dropout: DROPOUT_RATE,
            blocks: (0..BLOCK_COUNT).map(|_| block()).collect(),
        }
    }

    /// Weights from `Normal(0, scale / sqrt(d))`, biases zero.
    pub fn random(dim: usize, scale: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sd = scale / (dim as f64).sqrt();
        let mut net = Self::identity(dim);
        for block in &mut net.blocks {
            block.first = Dense::normal(dim, dim, Activation::Relu, sd, &mut rng);
            block.second = Dense::normal(dim, dim, Activation::LeakyRelu { slope: LEAKY_SLOPE }, sd, &mut rng);
        }
        net
    }

    /// Default starting point for training; close to the identity.
    pub fn near_identity(dim: usize, seed: u64) -> Self {
        Self::random(dim, 0.01, seed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(TlmError::Format("feature net dimension must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(TlmError::Format(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout
            )));
        }
        for block in &self.blocks {
            for layer in [&block.first, &block.second] {
                layer.check()?;
                if layer.inputs != self.dim || layer.outputs != self.dim {
                    return Err(TlmError::Format(format!(
                        "feature net layer is {}x{}, expected {}x{}",
                        layer.outputs, layer.inputs, self.dim, self.dim
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.blocks
            .iter()
            .map(|b| b.first.param_count() + b.second.param_count())
            .sum()
    }

    /// Flattened parameters: per block, first layer then second, weights
    /// before biases.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for block in &self.blocks {
            block.first.write_params(&mut out);
            block.second.write_params(&mut out);
        }
        out
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(TlmError::DimensionMismatch {
                expected: self.param_count(),
                got: params.len(),
            });
        }
        let mut at = 0;
        for block in &mut self.blocks {
            at += block.first.read_params(&params[at..]);
            at += block.second.read_params(&params[at..]);
        }
        Ok(())
    }

    fn check_input(&self, f: &[f64]) -> Result<()> {
        if f.len() == self.dim {
            Ok(())
        } else {
            Err(TlmError::DimensionMismatch {
                expected: self.dim,
                got: f.len(),
            })
        }
    }

    fn forward_cached(&self, f: &[f64], mut rng: Option<&mut ChaCha8Rng>) -> (Vec<f64>, Vec<BlockCache>) {
        let mut u = f.to_vec();
        let mut caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let pre1 = block.first.linear(&u);
            let mut hidden: Vec<f64> = pre1.iter().map(|&a| block.first.activation.apply(a)).collect();
            let mask1 = dropout_mask(hidden.len(), self.dropout, rng.as_deref_mut());
            apply_mask(&mut hidden, &mask1);
            let pre2 = block.second.linear(&hidden);
            let mut out: Vec<f64> = pre2.iter().map(|&a| block.second.activation.apply(a)).collect();
            let mask2 = dropout_mask(out.len(), self.dropout, rng.as_deref_mut());
            apply_mask(&mut out, &mask2);
            let next: Vec<f64> = u.iter().zip(&out).map(|(a, b)| a + b).collect();
            caches.push(BlockCache {
                input: std::mem::replace(&mut u, next),
                pre1,
                mask1,
                hidden,
                pre2,
                mask2,
            });
        }
        (u, caches)
    }

    /// Accumulates `d loss / d params` into `grad` given `d loss / d output`.
    fn backward(&self, caches: &[BlockCache], grad_out: Vec<f64>, grad: &mut [f64]) {
        let offsets: Vec<usize> = self
            .blocks
            .iter()
            .scan(0, |at, b| {
                let here = *at;
                *at += b.first.param_count() + b.second.param_count();
                Some(here)
            })
            .collect();
        let mut g = grad_out;
        for ((block, cache), &offset) in self.blocks.iter().zip(caches).zip(&offsets).rev() {
            let (g_first, g_rest) = grad[offset..].split_at_mut(block.first.param_count());
            let g_second = &mut g_rest[..block.second.param_count()];

            let mut delta2 = g.clone();
            apply_mask(&mut delta2, &cache.mask2);
            delta2
                .iter_mut()
                .zip(&cache.pre2)
                .for_each(|(d, &a)| *d *= block.second.activation.derivative(a));
            let mut delta1 = block.second.backward(&cache.hidden, &delta2, g_second);
            apply_mask(&mut delta1, &cache.mask1);
            delta1
                .iter_mut()
                .zip(&cache.pre1)
                .for_each(|(d, &a)| *d *= block.first.activation.derivative(a));
            let through = block.first.backward(&cache.input, &delta1, g_first);
            g.iter_mut().zip(&through).for_each(|(a, b)| *a += b);
        }
    }

    /// Evaluation-mode transform (no dropout).
    pub fn transform(&self, f: &[f64]) -> Result<Vec<f64>> {
        self.check_input(f)?;
        Ok(self.forward_cached(f, None).0)
    }

    /// Transforms every row of `data`, keeping its targets.
    pub fn transform_dataset(&self, data: &Dataset) -> Result<Dataset> {
        self.check_input(&data.features()[..data.dim()])?;
        let features: Vec<f64> = data
            .features()
            .par_chunks_exact(self.dim)
            .flat_map_iter(|row| self.forward_cached(row, None).0)
            .collect();
        Dataset::new(features, data.targets().to_vec(), self.dim)
    }
}

/// Network output for `f`. With `training` set, dropout masks are drawn from
/// a generator seeded by `seed`; otherwise `seed` is ignored.
pub fn forward(net: &FeatureNet, f: &[f64], training: bool, seed: u64) -> Result<Vec<f64>> {
    net.check_input(f)?;
    if training {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(net.forward_cached(f, Some(&mut rng)).0)
    } else {
        Ok(net.forward_cached(f, None).0)
    }
}

/// Nodes visited when routing by the label, with the branch target
/// (`true` = left) for each internal one.
fn label_path(tree: &TlmTree, y: f64) -> Vec<(&TlmNode, Option<bool>)> {
    let mut path = Vec::new();
    let mut node = &tree.root;
    loop {
        match &node.split {
            Some(split) => {
                let left = y <= split.threshold;
                path.push((node, Some(left)));
                node = if left { &split.left } else { &split.right };
            }
            None => {
                path.push((node, None));
                return path;
            }
        }
    }
}

/// Sums of the two term families of the joint loss and their counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct JointLossParts {
    pub bce_sum: f64,
    pub bce_terms: usize,
    pub se_sum: f64,
    pub se_terms: usize,
}

impl JointLossParts {
    pub fn mean(&self) -> f64 {
        (self.bce_sum + self.se_sum) / (self.bce_terms + self.se_terms) as f64
    }

    fn add(&mut self, other: &JointLossParts) {
        self.bce_sum += other.bce_sum;
        self.bce_terms += other.bce_terms;
        self.se_sum += other.se_sum;
        self.se_terms += other.se_terms;
    }
}

fn row_terms(tree: &TlmTree, f: &[f64], y: f64) -> JointLossParts {
    let mut parts = JointLossParts::default();
    for (node, branch) in label_path(tree, y) {
        if let (Some(left), Some(split)) = (branch, &node.split) {
            let s = split.classifier.logit(f);
            parts.bce_sum += softplus(s) - if left { s } else { 0.0 };
            parts.bce_terms += 1;
        }
        let e = node.regressor.eval(f) - y;
        parts.se_sum += e * e;
        parts.se_terms += 1;
    }
    parts
}

/// `d (sum of row terms) / d f` and the number of terms.
fn row_input_gradient(tree: &TlmTree, f: &[f64], y: f64) -> (Vec<f64>, usize) {
    let mut g = vec![0.0; f.len()];
    let mut terms = 0;
    for (node, branch) in label_path(tree, y) {
        if let (Some(left), Some(split)) = (branch, &node.split) {
            let ds = sigmoid(split.classifier.logit(f)) - if left { 1.0 } else { 0.0 };
            g.iter_mut().zip(&split.classifier.w).for_each(|(a, w)| *a += ds * w);
            terms += 1;
        }
        let de = 2.0 * (node.regressor.eval(f) - y);
        g.iter_mut().zip(&node.regressor.r).for_each(|(a, r)| *a += de * r);
        terms += 1;
    }
    (g, terms)
}

fn check_dims(tree: &TlmTree, net: &FeatureNet, data: &Dataset) -> Result<()> {
    for got in [net.dim, data.dim()] {
        if got != tree.dim {
            return Err(TlmError::DimensionMismatch {
                expected: tree.dim,
                got,
            });
        }
    }
    Ok(())
}

/// Both term families of the joint loss, dropout off.
pub fn joint_loss_parts(tree: &TlmTree, net: &FeatureNet, data: &Dataset) -> Result<JointLossParts> {
    check_dims(tree, net, data)?;
    let rows: Vec<usize> = (0..data.len()).collect();
    Ok(loss_over(tree, net, data, &rows))
}

fn loss_over(tree: &TlmTree, net: &FeatureNet, data: &Dataset, rows: &[usize]) -> JointLossParts {
    let partials: Vec<JointLossParts> = rows
        .par_chunks(GRADIENT_CHUNK)
        .map(|chunk| {
            let mut acc = JointLossParts::default();
            for &i in chunk {
                let (out, _) = net.forward_cached(data.row(i), None);
                acc.add(&row_terms(tree, &out, data.targets()[i]));
            }
            acc
        })
        .collect();
    let mut total = JointLossParts::default();
    partials.iter().for_each(|p| total.add(p));
    total
}

/// Mean of every node-level term over `data`, dropout off.
pub fn joint_loss(tree: &TlmTree, net: &FeatureNet, data: &Dataset) -> Result<f64> {
    Ok(joint_loss_parts(tree, net, data)?.mean())
}

/// Gradient over `rows`; when `dropout_seed` is set each row draws its own
/// masks from a generator derived from that seed and the row index.
fn gradient_over(
    tree: &TlmTree,
    net: &FeatureNet,
    data: &Dataset,
    rows: &[usize],
    dropout_seed: Option<u64>,
) -> Vec<f64> {
    let p = net.param_count();
    let partials: Vec<(Vec<f64>, usize)> = rows
        .par_chunks(GRADIENT_CHUNK)
        .map(|chunk| {
            let mut grad = vec![0.0; p];
            let mut terms = 0;
            for &i in chunk {
                let mut rng = dropout_seed.map(|s| ChaCha8Rng::seed_from_u64(derive_seed(s, i as u64)));
                let (out, caches) = net.forward_cached(data.row(i), rng.as_mut());
                let (g_out, t) = row_input_gradient(tree, &out, data.targets()[i]);
                net.backward(&caches, g_out, &mut grad);
                terms += t;
            }
            (grad, terms)
        })
        .collect();
    let mut total = vec![0.0; p];
    let mut terms = 0;
    for (g, t) in &partials {
        total.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        terms += t;
    }
    if terms > 0 {
        let scale = 1.0 / terms as f64;
        total.iter_mut().for_each(|g| *g *= scale);
    }
    total
}

/// Exact gradient of `joint_loss` over `batch` with respect to
/// `net.parameters()`, dropout off. Routing is by label, so it does not
/// depend on the network.
pub fn gradient(tree: &TlmTree, net: &FeatureNet, batch: &Dataset) -> Result<Vec<f64>> {
    check_dims(tree, net, batch)?;
    let rows: Vec<usize> = (0..batch.len()).collect();
    Ok(gradient_over(tree, net, batch, &rows, None))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFit {
    pub net: FeatureNet,
    /// Joint loss on the full data (dropout off) before training and after
    /// each epoch.
    pub loss_curve: Vec<f64>,
}

/// Trains a near-identity network by minibatch gradient descent on the
/// joint loss. The tree is only read.
pub fn train_features(tree: &TlmTree, data: &Dataset, cfg: &TrainConfig) -> Result<FeatureFit> {
    cfg.validate()?;
    let init = FeatureNet::near_identity(tree.dim, derive_seed(cfg.seed, 0xfea7));
    train_features_from(tree, data, cfg, init)
}

/// As `train_features`, starting from `init`.
pub fn train_features_from(tree: &TlmTree, data: &Dataset, cfg: &TrainConfig, init: FeatureNet) -> Result<FeatureFit> {
    init.validate()?;
    check_dims(tree, &init, data)?;
    let mut scratch = init.clone();
    let mut params = init.parameters();
    let all_rows: Vec<usize> = (0..data.len()).collect();
    let mut eval_net = init.clone();
    let curve = minibatch_descent(
        &mut params,
        data.len(),
        cfg,
        |p| {
            eval_net.set_parameters(p).expect("parameter count fixed");
            loss_over(tree, &eval_net, data, &all_rows).mean()
        },
        |p, rows, rng| {
            scratch.set_parameters(p).expect("parameter count fixed");
            let seed = cfg.dropout_enabled.then(|| rng.random::<u64>());
            gradient_over(tree, &scratch, data, rows, seed)
        },
    )?;
    let mut net = init;
    net.set_parameters(&params)?;
    log::info!(
        "feature net trained: loss {:.6} -> {:.6} over {} epochs",
        curve[0],
        curve[curve.len() - 1],
        cfg.epochs
    );
    Ok(FeatureFit { net, loss_curve: curve })
}
