//! Trained model bundle and its JSON file format.

use std::borrow::Cow;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Result, TlmError};
use crate::feature_opt::FeatureNet;
use crate::linear::{LinearClassifier, LinearRegressor};
use crate::nn::TrainConfig;
use crate::routing::{predict_one, predict_rows, BatchPrediction, RoutingMode};
use crate::tree::{NodeStats, Split, TlmNode, TlmTree, TreeConfig, MAX_SUPPORTED_DEPTH};

pub const FORMAT_VERSION: u32 = 1;

/// Settings the model was trained with, echoed into the model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingEcho {
    pub tree: TreeConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_opt: Option<TrainConfig>,
    #[serde(default)]
    pub iterate: bool,
}

/// A tree plus the optional feature network applied (in evaluation mode)
/// before routing.
#[derive(Debug, Clone, PartialEq)]
pub struct TlmModel {
    pub tree: TlmTree,
    pub feature_net: Option<FeatureNet>,
    pub training: TrainingEcho,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeRecord {
    id: u64,
    depth: usize,
    regressor: LinearRegressor,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    classifier: Option<LinearClassifier>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    left: Option<Box<NodeRecord>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    right: Option<Box<NodeRecord>>,
    diagnostics: NodeStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format_version: u32,
    dim: usize,
    tree: NodeRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    feature_net: Option<FeatureNet>,
    training_config: TrainingEcho,
}

impl From<&TlmNode> for NodeRecord {
    fn from(node: &TlmNode) -> Self {
        let split = node.split.as_deref();
        Self {
            id: node.id,
            depth: node.depth,
            regressor: node.regressor.clone(),
            threshold: split.map(|s| s.threshold),
            classifier: split.map(|s| s.classifier.clone()),
            left: split.map(|s| Box::new(NodeRecord::from(&s.left))),
            right: split.map(|s| Box::new(NodeRecord::from(&s.right))),
            diagnostics: node.stats.clone(),
        }
    }
}

fn corrupt(id: u64, what: impl std::fmt::Display) -> TlmError {
    TlmError::Format(format!("node {id}: {what}"))
}

fn finite_vec(values: &[f64]) -> bool {
    values.iter().all(|v| v.is_finite())
}

impl NodeRecord {
    fn into_node(self, dim: usize, id: u64, depth: usize) -> Result<TlmNode> {
        if self.id != id || self.depth != depth {
            return Err(corrupt(
                self.id,
                format!("expected id {id} at depth {depth}, found depth {}", self.depth),
            ));
        }
        if depth > MAX_SUPPORTED_DEPTH {
            return Err(corrupt(id, "tree deeper than supported"));
        }
        if self.regressor.r.len() != dim || !finite_vec(&self.regressor.r) || !self.regressor.b.is_finite() {
            return Err(corrupt(id, "regressor has the wrong dimension or non-finite values"));
        }
        let split = match (self.threshold, self.classifier, self.left, self.right) {
            (None, None, None, None) => None,
            (Some(threshold), Some(classifier), Some(left), Some(right)) => {
                if !threshold.is_finite() {
                    return Err(corrupt(id, "non-finite threshold"));
                }
                if classifier.w.len() != dim || !finite_vec(&classifier.w) || !classifier.c.is_finite() {
                    return Err(corrupt(id, "classifier has the wrong dimension or non-finite values"));
                }
                Some(Box::new(Split {
                    threshold,
                    classifier,
                    left: left.into_node(dim, 2 * id + 1, depth + 1)?,
                    right: right.into_node(dim, 2 * id + 2, depth + 1)?,
                }))
            }
            _ => return Err(corrupt(id, "internal nodes need threshold, classifier, left and right")),
        };
        Ok(TlmNode {
            id,
            depth,
            regressor: self.regressor,
            stats: self.diagnostics,
            split,
        })
    }
}

impl TlmModel {
    pub fn new(tree: TlmTree) -> Self {
        let training = TrainingEcho {
            tree: tree.config.clone(),
            feature_opt: None,
            iterate: false,
        };
        Self {
            tree,
            feature_net: None,
            training,
        }
    }

    pub fn dim(&self) -> usize {
        self.tree.dim
    }

    /// Features as the tree sees them.
    pub fn transform<'a>(&self, f: &'a [f64]) -> Result<Cow<'a, [f64]>> {
        match &self.feature_net {
            Some(net) => Ok(Cow::Owned(net.transform(f)?)),
            None => {
                if f.len() != self.dim() {
                    return Err(TlmError::DimensionMismatch {
                        expected: self.dim(),
                        got: f.len(),
                    });
                }
                Ok(Cow::Borrowed(f))
            }
        }
    }

    pub fn transform_dataset<'a>(&self, data: &'a Dataset) -> Result<Cow<'a, Dataset>> {
        if data.dim() != self.dim() {
            return Err(TlmError::DimensionMismatch {
                expected: self.dim(),
                got: data.dim(),
            });
        }
        match &self.feature_net {
            Some(net) => Ok(Cow::Owned(net.transform_dataset(data)?)),
            None => Ok(Cow::Borrowed(data)),
        }
    }

    /// Prediction and attributed leaf for one input.
    pub fn predict(&self, f: &[f64], mode: RoutingMode, y_true: Option<f64>) -> Result<(f64, u64)> {
        predict_one(&self.tree, &self.transform(f)?, mode, y_true)
    }

    /// Row-major batch prediction; metrics need `targets`.
    pub fn predict_rows(
        &self,
        features: &[f64],
        targets: Option<&[f64]>,
        mode: RoutingMode,
    ) -> Result<BatchPrediction> {
        match &self.feature_net {
            Some(net) => {
                let d = self.dim();
                if !features.len().is_multiple_of(d) {
                    return Err(TlmError::DimensionMismatch {
                        expected: d,
                        got: features.len() % d,
                    });
                }
                let moved = features
                    .chunks_exact(d)
                    .map(|row| net.transform(row))
                    .collect::<Result<Vec<_>>>()?
                    .concat();
                predict_rows(&self.tree, &moved, targets, mode)
            }
            None => predict_rows(&self.tree, features, targets, mode),
        }
    }

    pub fn predict_dataset(&self, data: &Dataset, mode: RoutingMode) -> Result<BatchPrediction> {
        let moved = self.transform_dataset(data)?;
        predict_rows(&self.tree, moved.features(), Some(moved.targets()), mode)
    }

    fn to_file(&self) -> ModelFile {
        ModelFile {
            format_version: FORMAT_VERSION,
            dim: self.dim(),
            tree: NodeRecord::from(&self.tree.root),
            feature_net: self.feature_net.clone(),
            training_config: self.training.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("model serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| TlmError::Format(e.to_string()))?;
        if file.format_version != FORMAT_VERSION {
            return Err(TlmError::Format(format!(
                "unsupported format_version {} (expected {FORMAT_VERSION})",
                file.format_version
            )));
        }
        if file.dim == 0 {
            return Err(TlmError::Format("dim must be >= 1".into()));
        }
        let root = file.tree.into_node(file.dim, 0, 0)?;
        if let Some(net) = &file.feature_net {
            net.validate()?;
            if net.dim != file.dim {
                return Err(TlmError::Format(format!(
                    "feature net dimension {} differs from model dimension {}",
                    net.dim, file.dim
                )));
            }
        }
        Ok(Self {
            tree: TlmTree {
                root,
                dim: file.dim,
                config: file.training_config.tree.clone(),
            },
            feature_net: file.feature_net,
            training: file.training_config,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json() + "\n").map_err(|e| TlmError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| TlmError::io(path, e))?;
        Self::from_json(&text)
    }
}
