//! Inference over a trained tree.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{compute_metrics, Dataset, Metrics};
use crate::error::{Result, TlmError};
use crate::tree::{TlmNode, TlmTree};

/// How soft routing weighs node predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SoftWeighting {
    /// Nodes on the hard path, weighted by the product of taken-branch
    /// probabilities (root weight 1), normalized.
    #[default]
    Path,
    /// Every node, weighted by its probability of being reached, normalized.
    Full,
}

/// Serialized as its name (`hard`, `soft`, `soft-full`, `oracle`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum RoutingMode {
    Hard,
    Soft(SoftWeighting),
    Oracle,
}

impl RoutingMode {
    pub fn name(&self) -> &'static str {
        match self {
            RoutingMode::Hard => "hard",
            RoutingMode::Soft(SoftWeighting::Path) => "soft",
            RoutingMode::Soft(SoftWeighting::Full) => "soft-full",
            RoutingMode::Oracle => "oracle",
        }
    }
}

impl std::str::FromStr for RoutingMode {
    type Err = TlmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hard" => Ok(Self::Hard),
            "soft" | "soft-path" => Ok(Self::Soft(SoftWeighting::Path)),
            "soft-full" => Ok(Self::Soft(SoftWeighting::Full)),
            "oracle" => Ok(Self::Oracle),
            other => Err(TlmError::InvalidConfig(format!(
                "routing mode must be hard, soft, soft-full or oracle, got '{other}'"
            ))),
        }
    }
}

impl From<RoutingMode> for String {
    fn from(mode: RoutingMode) -> Self {
        mode.name().to_string()
    }
}

impl TryFrom<String> for RoutingMode {
    type Error = TlmError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl std::fmt::Display for RoutingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn check_dim(tree: &TlmTree, f: &[f64]) -> Result<()> {
    if f.len() == tree.dim {
        Ok(())
    } else {
        Err(TlmError::DimensionMismatch {
            expected: tree.dim,
            got: f.len(),
        })
    }
}

/// Root-to-leaf nodes chosen by the classifiers.
pub fn hard_path<'a>(tree: &'a TlmTree, f: &[f64]) -> Result<Vec<&'a TlmNode>> {
    check_dim(tree, f)?;
    let mut node = &tree.root;
    let mut path = vec![node];
    while let Some(split) = &node.split {
        node = if split.classifier.goes_left(f) {
            &split.left
        } else {
            &split.right
        };
        path.push(node);
    }
    Ok(path)
}

/// Leaf regressor's prediction and the leaf id.
pub fn predict_hard(tree: &TlmTree, f: &[f64]) -> Result<(f64, u64)> {
    let path = hard_path(tree, f)?;
    let leaf = path.last().expect("path holds the root");
    Ok((leaf.regressor.eval(f), leaf.id))
}

pub fn predict_soft(tree: &TlmTree, f: &[f64], weighting: SoftWeighting) -> Result<f64> {
    check_dim(tree, f)?;
    let (num, den) = match weighting {
        SoftWeighting::Path => {
            let mut node = &tree.root;
            let mut weight = 1.0;
            let (mut num, mut den) = (node.regressor.eval(f), 1.0);
            while let Some(split) = &node.split {
                let p = split.classifier.prob_left(f);
                let (next, p_taken) = if split.classifier.goes_left(f) {
                    (&split.left, p)
                } else {
                    (&split.right, 1.0 - p)
                };
                weight *= p_taken;
                num += weight * next.regressor.eval(f);
                den += weight;
                node = next;
            }
            (num, den)
        }
        SoftWeighting::Full => {
            let mut acc = (0.0, 0.0);
            accumulate_full(&tree.root, f, 1.0, &mut acc);
            acc
        }
    };
    Ok(num / den)
}

fn accumulate_full(node: &TlmNode, f: &[f64], mass: f64, acc: &mut (f64, f64)) {
    acc.0 += mass * node.regressor.eval(f);
    acc.1 += mass;
    if let Some(split) = &node.split {
        let p = split.classifier.prob_left(f);
        accumulate_full(&split.left, f, mass * p, acc);
        accumulate_full(&split.right, f, mass * (1.0 - p), acc);
    }
}

/// Routes by the true response (`y_true <= threshold` goes left).
pub fn predict_oracle(tree: &TlmTree, f: &[f64], y_true: f64) -> Result<(f64, u64)> {
    check_dim(tree, f)?;
    if !y_true.is_finite() {
        return Err(TlmError::MissingTargets(
            "oracle routing needs a finite response".into(),
        ));
    }
    let mut node = &tree.root;
    while let Some(split) = &node.split {
        node = if y_true <= split.threshold {
            &split.left
        } else {
            &split.right
        };
    }
    Ok((node.regressor.eval(f), node.id))
}

/// One prediction and the leaf it is attributed to (the hard leaf in soft
/// mode).
pub fn predict_one(tree: &TlmTree, f: &[f64], mode: RoutingMode, y_true: Option<f64>) -> Result<(f64, u64)> {
    match mode {
        RoutingMode::Hard => predict_hard(tree, f),
        RoutingMode::Soft(w) => {
            let (_, leaf) = predict_hard(tree, f)?;
            Ok((predict_soft(tree, f, w)?, leaf))
        }
        RoutingMode::Oracle => {
            let y = y_true.ok_or_else(|| TlmError::MissingTargets("oracle routing needs targets".into()))?;
            predict_oracle(tree, f, y)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchPrediction {
    pub mode: RoutingMode,
    pub predictions: Vec<f64>,
    pub leaf_ids: Vec<u64>,
    /// Present when targets were supplied.
    pub metrics: Option<Metrics>,
    pub per_leaf: BTreeMap<u64, Metrics>,
}

/// Predicts every row of row-major `features`; metrics need `targets`.
pub fn predict_rows(
    tree: &TlmTree,
    features: &[f64],
    targets: Option<&[f64]>,
    mode: RoutingMode,
) -> Result<BatchPrediction> {
    let d = tree.dim;
    if d == 0 || !features.len().is_multiple_of(d) {
        return Err(TlmError::DimensionMismatch {
            expected: d,
            got: features.len(),
        });
    }
    let n = features.len() / d;
    if let Some(t) = targets {
        if t.len() != n {
            return Err(TlmError::LengthMismatch {
                left: n,
                right: t.len(),
            });
        }
    }
    if mode == RoutingMode::Oracle && targets.is_none() {
        return Err(TlmError::MissingTargets("oracle routing needs targets".into()));
    }
    let out: Vec<(f64, u64)> = features
        .par_chunks_exact(d)
        .enumerate()
        .map(|(i, f)| predict_one(tree, f, mode, targets.map(|t| t[i])))
        .collect::<Result<_>>()?;
    let (predictions, leaf_ids): (Vec<f64>, Vec<u64>) = out.into_iter().unzip();

    let mut metrics = None;
    let mut per_leaf = BTreeMap::new();
    if let Some(t) = targets {
        if n > 0 {
            metrics = Some(compute_metrics(&predictions, t)?);
        }
        let mut groups: BTreeMap<u64, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
        for ((p, y), leaf) in predictions.iter().zip(t).zip(&leaf_ids) {
            let g = groups.entry(*leaf).or_default();
            g.0.push(*p);
            g.1.push(*y);
        }
        for (leaf, (p, y)) in groups {
            per_leaf.insert(leaf, compute_metrics(&p, &y)?);
        }
    }
    Ok(BatchPrediction {
        mode,
        predictions,
        leaf_ids,
        metrics,
        per_leaf,
    })
}

pub fn predict_batch(tree: &TlmTree, data: &Dataset, mode: RoutingMode) -> Result<BatchPrediction> {
    predict_rows(tree, data.features(), Some(data.targets()), mode)
}
