//! Greedy construction of the tessellation.
//!
//! Every node holds a ridge regressor fitted on its rows. An internal node
//! also holds a response threshold `t` and a linear classifier trained to
//! separate `y <= t` (left) from `y > t` (right). Thresholds are scanned over
//! quantiles of the node's responses; the one whose two child regressors
//! leave the least squared error wins. Leaves are the cells of the
//! tessellation, each the intersection of the half-spaces along its path.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{derive_seed, synthesize, Dataset, MixupConfig};
use crate::error::{Result, TlmError};
use crate::linear::{fit_classifier, fit_ridge, FitConfig, LinearClassifier, LinearRegressor};

/// Deepest tree whose heap-ordered node ids fit in a `u64`.
pub const MAX_SUPPORTED_DEPTH: usize = 62;

/// Splits whose error reduction is below this fraction of the node's total
/// sum of squares are treated as no improvement.
const MIN_RELATIVE_REDUCTION: f64 = 1e-10;

/// How a node's rows are handed to its children.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PartitionRule {
    /// By response: `y <= t` goes left.
    #[default]
    Label,
    /// By the node classifier's decision.
    Classifier,
}

impl std::str::FromStr for PartitionRule {
    type Err = TlmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "label" => Ok(Self::Label),
            "classifier" => Ok(Self::Classifier),
            other => Err(TlmError::InvalidConfig(format!(
                "partition_by must be 'label' or 'classifier', got '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TreeConfig {
    pub max_depth: usize,
    /// Smallest number of original rows allowed on either side of a split.
    pub min_leaf: usize,
    /// Number of quantile cut points scanned per node.
    pub n_thresholds: usize,
    /// Nodes whose response range is at most this are pure.
    pub purity_eps: f64,
    pub partition_by: PartitionRule,
    /// Base seed for per-node mixup.
    pub seed: u64,
    pub fit: FitConfig,
    pub mixup: MixupConfig,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self {
            max_depth: 4,
            min_leaf: 20,
            n_thresholds: 15,
            purity_eps: 1e-9,
            partition_by: PartitionRule::Label,
            seed: 0,
            fit: FitConfig::default(),
            mixup: MixupConfig::default(),
        }
    }
}

impl TreeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_depth > MAX_SUPPORTED_DEPTH {
            return Err(TlmError::InvalidConfig(format!(
                "max_depth {} exceeds the supported {MAX_SUPPORTED_DEPTH}",
                self.max_depth
            )));
        }
        if self.min_leaf == 0 {
            return Err(TlmError::InvalidConfig("min_leaf must be >= 1".into()));
        }
        if self.n_thresholds == 0 {
            return Err(TlmError::InvalidConfig("n_thresholds must be >= 1".into()));
        }
        if self.purity_eps.is_nan() || self.purity_eps < 0.0 {
            return Err(TlmError::InvalidConfig("purity_eps must be >= 0".into()));
        }
        self.fit.validate()?;
        self.mixup.validate()
    }
}

/// Training-time statistics of a node, over the original rows it received.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeStats {
    pub train_count: usize,
    pub train_sse: f64,
    pub train_mae: f64,
    pub y_min: f64,
    pub y_max: f64,
    /// Error reduction achieved by this node's split; absent on leaves.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reduction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub threshold: f64,
    pub classifier: LinearClassifier,
    pub left: TlmNode,
    pub right: TlmNode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TlmNode {
    /// Heap index: the root is 0, children of `k` are `2k + 1` and `2k + 2`.
    pub id: u64,
    pub depth: usize,
    pub regressor: LinearRegressor,
    pub stats: NodeStats,
    pub split: Option<Box<Split>>,
}

impl TlmNode {
    pub fn is_leaf(&self) -> bool {
        self.split.is_none()
    }

    /// Preorder traversal.
    pub fn walk<'a>(&'a self, out: &mut Vec<&'a TlmNode>) {
        out.push(self);
        if let Some(split) = &self.split {
            split.left.walk(out);
            split.right.walk(out);
        }
    }

    fn truncated(&self, depth: usize) -> TlmNode {
        let mut node = TlmNode {
            id: self.id,
            depth: self.depth,
            regressor: self.regressor.clone(),
            stats: self.stats.clone(),
            split: None,
        };
        match &self.split {
            Some(split) if self.depth < depth => {
                node.split = Some(Box::new(Split {
                    threshold: split.threshold,
                    classifier: split.classifier.clone(),
                    left: split.left.truncated(depth),
                    right: split.right.truncated(depth),
                }));
            }
            _ => node.stats.reduction = None,
        }
        node
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TlmTree {
    pub root: TlmNode,
    pub dim: usize,
    pub config: TreeConfig,
}

/// Which side of a node's hyperplane a cell lies on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Halfspace {
    pub node_id: u64,
    pub w: Vec<f64>,
    pub c: f64,
    /// `true`: `w·f + c >= 0`; `false`: `w·f + c < 0`.
    pub left: bool,
}

impl Halfspace {
    pub fn contains(&self, f: &[f64]) -> bool {
        let z = crate::linear::dot(&self.w, f) + self.c;
        if self.left {
            z >= 0.0
        } else {
            z < 0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeafCell {
    pub leaf_id: u64,
    /// Root-to-leaf constraints.
    pub constraints: Vec<Halfspace>,
    pub regressor: LinearRegressor,
}

impl LeafCell {
    pub fn contains(&self, f: &[f64]) -> bool {
        self.constraints.iter().all(|h| h.contains(f))
    }
}

impl TlmTree {
    pub fn nodes(&self) -> Vec<&TlmNode> {
        let mut out = Vec::new();
        self.root.walk(&mut out);
        out
    }

    pub fn leaves(&self) -> Vec<&TlmNode> {
        self.nodes().into_iter().filter(|n| n.is_leaf()).collect()
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves().len()
    }

    pub fn depth(&self) -> usize {
        self.nodes().iter().map(|n| n.depth).max().unwrap_or(0)
    }

    pub fn node(&self, id: u64) -> Option<&TlmNode> {
        self.nodes().into_iter().find(|n| n.id == id)
    }

    /// Same tree with every node at `depth` turned into a leaf.
    pub fn truncate(&self, depth: usize) -> TlmTree {
        TlmTree {
            root: self.root.truncated(depth),
            dim: self.dim,
            config: self.config.clone(),
        }
    }

    /// Sum of leaf regressors' squared error over their training partitions.
    pub fn training_sse(&self) -> f64 {
        self.leaves().iter().map(|n| n.stats.train_sse).sum()
    }

    /// Training SSE of the tree truncated at each depth `0..=self.depth()`.
    pub fn sse_by_depth(&self) -> Vec<f64> {
        (0..=self.depth()).map(|d| self.truncate(d).training_sse()).collect()
    }

    pub fn leaf_cells(&self) -> Vec<LeafCell> {
        let mut cells = Vec::new();
        let mut path = Vec::new();
        collect_cells(&self.root, &mut path, &mut cells);
        cells
    }
}

pub fn leaf_cells(tree: &TlmTree) -> Vec<LeafCell> {
    tree.leaf_cells()
}

fn collect_cells(node: &TlmNode, path: &mut Vec<Halfspace>, out: &mut Vec<LeafCell>) {
    match &node.split {
        None => out.push(LeafCell {
            leaf_id: node.id,
            constraints: path.clone(),
            regressor: node.regressor.clone(),
        }),
        Some(split) => {
            for (child, left) in [(&split.left, true), (&split.right, false)] {
                path.push(Halfspace {
                    node_id: node.id,
                    w: split.classifier.w.clone(),
                    c: split.classifier.c,
                    left,
                });
                collect_cells(child, path, out);
                path.pop();
            }
        }
    }
}

/// Cut points at `n_thresholds` evenly spaced interior quantiles of
/// `targets`, each placed midway between two consecutive distinct sorted
/// values so that the label split `y <= t` leaves at least `min_leaf` rows on
/// both sides. Cut points that would need to move onto an occupied boundary
/// are moved to the nearest legal one; duplicates are dropped.
pub fn candidate_thresholds(targets: &[f64], cfg: &TreeConfig) -> Vec<f64> {
    let n = targets.len();
    let mut sorted = targets.to_vec();
    sorted.sort_by(f64::total_cmp);
    if n < 2 || sorted[n - 1] - sorted[0] <= cfg.purity_eps {
        return Vec::new();
    }
    let min_leaf = cfg.min_leaf.max(1);
    if 2 * min_leaf > n {
        return Vec::new();
    }
    // Index k means "k rows go left".
    let legal: Vec<usize> = (min_leaf..=n - min_leaf)
        .filter(|&k| sorted[k - 1] < sorted[k])
        .collect();
    if legal.is_empty() {
        return Vec::new();
    }
    let mut out: Vec<f64> = (1..=cfg.n_thresholds)
        .map(|i| {
            let q = i as f64 / (cfg.n_thresholds + 1) as f64;
            let target = (q * n as f64).round() as usize;
            let pos = legal.partition_point(|&k| k < target);
            let k = match (pos.checked_sub(1).map(|p| legal[p]), legal.get(pos)) {
                (Some(lo), Some(&hi)) => {
                    if target - lo <= hi - target {
                        lo
                    } else {
                        hi
                    }
                }
                (Some(lo), None) => lo,
                (None, Some(&hi)) => hi,
                (None, None) => unreachable!("legal is nonempty"),
            };
            let (a, b) = (sorted[k - 1], sorted[k]);
            let mid = a + (b - a) / 2.0;
            if mid < b {
                mid
            } else {
                a
            }
        })
        .collect();
    out.sort_by(f64::total_cmp);
    out.dedup();
    out
}

/// A fully evaluated split of one node.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitCandidate {
    pub threshold: f64,
    pub classifier: LinearClassifier,
    pub parent: LinearRegressor,
    pub left: LinearRegressor,
    pub right: LinearRegressor,
    /// Indices (into the node data) of the original rows on each side.
    pub left_rows: Vec<usize>,
    pub right_rows: Vec<usize>,
    pub parent_sse: f64,
    pub left_sse: f64,
    pub right_sse: f64,
    /// `parent_sse − (left_sse + right_sse)`.
    pub reduction: f64,
}

/// A node's original rows together with its mixup rows.
struct NodeRows<'a> {
    data: &'a Dataset,
    aug_features: Vec<f64>,
    aug_targets: Vec<f64>,
}

impl<'a> NodeRows<'a> {
    fn new(data: &'a Dataset, mixup: &MixupConfig, seed: u64) -> Result<Self> {
        let (aug_features, aug_targets, _) = synthesize(data, mixup, seed)?;
        Ok(Self {
            data,
            aug_features,
            aug_targets,
        })
    }

    fn dim(&self) -> usize {
        self.data.dim()
    }

    fn aug_row(&self, j: usize) -> &[f64] {
        let d = self.dim();
        &self.aug_features[j * d..(j + 1) * d]
    }

    /// Features and targets of the selected original and mixup rows.
    fn gather(&self, orig: &[usize], aug: &[usize]) -> (Vec<f64>, Vec<f64>) {
        let d = self.dim();
        let mut f = Vec::with_capacity((orig.len() + aug.len()) * d);
        let mut y = Vec::with_capacity(orig.len() + aug.len());
        for &i in orig {
            f.extend_from_slice(self.data.row(i));
            y.push(self.data.targets()[i]);
        }
        for &j in aug {
            f.extend_from_slice(self.aug_row(j));
            y.push(self.aug_targets[j]);
        }
        (f, y)
    }

    fn all_aug(&self) -> Vec<usize> {
        (0..self.aug_targets.len()).collect()
    }

    fn fit_regressor(&self, orig: &[usize], aug: &[usize], cfg: &FitConfig) -> Result<LinearRegressor> {
        let (f, y) = self.gather(orig, aug);
        fit_ridge(&f, &y, self.dim(), cfg.ridge_lambda)
    }

    fn fit_classifier(&self, threshold: f64, cfg: &FitConfig) -> Result<LinearClassifier> {
        let all: Vec<usize> = (0..self.data.len()).collect();
        let (f, y) = self.gather(&all, &self.all_aug());
        let labels: Vec<f64> = y.iter().map(|&v| if v <= threshold { 1.0 } else { 0.0 }).collect();
        fit_classifier(&f, self.dim(), &labels, cfg)
    }

    fn sse(&self, model: &LinearRegressor, orig: &[usize]) -> f64 {
        orig.iter()
            .map(|&i| {
                let e = self.data.targets()[i] - model.eval(self.data.row(i));
                e * e
            })
            .sum()
    }
}

type RowRule<'a> = Box<dyn Fn(&[f64], f64) -> bool + 'a>;

/// Outcome of scoring one threshold, before the classifier is kept.
struct Scored {
    threshold: f64,
    classifier: Option<LinearClassifier>,
    left: LinearRegressor,
    right: LinearRegressor,
    left_rows: Vec<usize>,
    right_rows: Vec<usize>,
    left_sse: f64,
    right_sse: f64,
}

fn score_threshold(rows: &NodeRows<'_>, t: f64, cfg: &TreeConfig, with_classifier: bool) -> Result<Option<Scored>> {
    let n = rows.data.len();
    let (classifier, goes_left): (Option<LinearClassifier>, RowRule<'_>) = match cfg.partition_by {
        PartitionRule::Label => {
            let clf = if with_classifier {
                Some(rows.fit_classifier(t, &cfg.fit)?)
            } else {
                None
            };
            (clf, Box::new(move |_, y| y <= t))
        }
        PartitionRule::Classifier => {
            let clf = rows.fit_classifier(t, &cfg.fit)?;
            let rule = clf.clone();
            (Some(clf), Box::new(move |f, _| rule.goes_left(f)))
        }
    };
    let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
        (0..n).partition(|&i| goes_left(rows.data.row(i), rows.data.targets()[i]));
    if left_rows.len() < cfg.min_leaf || right_rows.len() < cfg.min_leaf {
        return Ok(None);
    }
    let (left_aug, right_aug): (Vec<usize>, Vec<usize>) =
        (0..rows.aug_targets.len()).partition(|&j| goes_left(rows.aug_row(j), rows.aug_targets[j]));
    let left = rows.fit_regressor(&left_rows, &left_aug, &cfg.fit)?;
    let right = rows.fit_regressor(&right_rows, &right_aug, &cfg.fit)?;
    Ok(Some(Scored {
        threshold: t,
        classifier,
        left_sse: rows.sse(&left, &left_rows),
        right_sse: rows.sse(&right, &right_rows),
        left,
        right,
        left_rows,
        right_rows,
    }))
}

/// Scores the split of `node_data` at threshold `t` (mixup, when enabled,
/// seeded by `cfg.seed`).
pub fn evaluate_split(node_data: &Dataset, t: f64, cfg: &TreeConfig) -> Result<SplitCandidate> {
    cfg.validate()?;
    let rows = NodeRows::new(node_data, &cfg.mixup, derive_seed(cfg.seed, 0))?;
    let all: Vec<usize> = (0..node_data.len()).collect();
    let parent = rows.fit_regressor(&all, &rows.all_aug(), &cfg.fit)?;
    let parent_sse = rows.sse(&parent, &all);
    let scored = score_threshold(&rows, t, cfg, true)?.ok_or_else(|| {
        let left = node_data.targets().iter().filter(|&&y| y <= t).count();
        TlmError::IllegalSplit {
            threshold: t,
            left,
            right: node_data.len() - left,
            min_leaf: cfg.min_leaf,
        }
    })?;
    Ok(SplitCandidate {
        threshold: t,
        classifier: scored.classifier.expect("classifier requested"),
        parent,
        reduction: parent_sse - (scored.left_sse + scored.right_sse),
        parent_sse,
        left: scored.left,
        right: scored.right,
        left_rows: scored.left_rows,
        right_rows: scored.right_rows,
        left_sse: scored.left_sse,
        right_sse: scored.right_sse,
    })
}

pub fn build_tree(data: &Dataset, cfg: &TreeConfig) -> Result<TlmTree> {
    cfg.validate()?;
    let root = build_node(data, 0, 0, cfg)?;
    Ok(TlmTree {
        root,
        dim: data.dim(),
        config: cfg.clone(),
    })
}

fn build_node(data: &Dataset, id: u64, depth: usize, cfg: &TreeConfig) -> Result<TlmNode> {
    let rows = NodeRows::new(data, &cfg.mixup, derive_seed(cfg.seed, id))?;
    let all: Vec<usize> = (0..data.len()).collect();
    let regressor = rows.fit_regressor(&all, &rows.all_aug(), &cfg.fit)?;
    let parent_sse = rows.sse(&regressor, &all);
    let (y_min, y_max) = data.target_range();
    let mae = all
        .iter()
        .map(|&i| (data.targets()[i] - regressor.eval(data.row(i))).abs())
        .sum::<f64>()
        / data.len() as f64;
    let mut node = TlmNode {
        id,
        depth,
        regressor,
        stats: NodeStats {
            train_count: data.len(),
            train_sse: parent_sse,
            train_mae: mae,
            y_min,
            y_max,
            reduction: None,
        },
        split: None,
    };
    if depth >= cfg.max_depth || y_max - y_min <= cfg.purity_eps {
        return Ok(node);
    }
    let thresholds = candidate_thresholds(data.targets(), cfg);
    if thresholds.is_empty() {
        return Ok(node);
    }

    let scored: Vec<Option<Scored>> = thresholds
        .par_iter()
        .map(|&t| score_threshold(&rows, t, cfg, false))
        .collect::<Result<_>>()?;
    let mut best: Option<(f64, Scored)> = None;
    for s in scored.into_iter().flatten() {
        let reduction = parent_sse - (s.left_sse + s.right_sse);
        if best.as_ref().is_none_or(|(r, _)| reduction > *r) {
            best = Some((reduction, s));
        }
    }
    let Some((reduction, best)) = best else {
        return Ok(node);
    };
    let mean = data.mean_target();
    let total_ss: f64 = data.targets().iter().map(|y| (y - mean) * (y - mean)).sum();
    if reduction <= MIN_RELATIVE_REDUCTION * total_ss {
        return Ok(node);
    }
    log::debug!(
        "node {id} depth {depth}: split at {:.6} (reduction {reduction:.6e}, {} | {})",
        best.threshold,
        best.left_rows.len(),
        best.right_rows.len()
    );

    let classifier = match best.classifier {
        Some(c) => c,
        None => rows.fit_classifier(best.threshold, &cfg.fit)?,
    };
    let left_data = data.select(&best.left_rows)?;
    let right_data = data.select(&best.right_rows)?;
    let (left, right) = rayon::join(
        || build_node(&left_data, 2 * id + 1, depth + 1, cfg),
        || build_node(&right_data, 2 * id + 2, depth + 1, cfg),
    );
    node.stats.reduction = Some(reduction);
    node.split = Some(Box::new(Split {
        threshold: best.threshold,
        classifier,
        left: left?,
        right: right?,
    }));
    Ok(node)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linear::fit_regressor;

    fn cfg(max_depth: usize, min_leaf: usize) -> TreeConfig {
        TreeConfig {
            max_depth,
            min_leaf,
            ..TreeConfig::default()
        }
    }

    #[test]
    fn quantile_cut_points() {
        let ys: Vec<f64> = (20..=58).map(f64::from).collect();
        let c = TreeConfig {
            n_thresholds: 3,
            min_leaf: 1,
            ..TreeConfig::default()
        };
        let t = candidate_thresholds(&ys, &c);
        assert_eq!(t.len(), 3);
        // Oracle: the left count of each cut is the nearest integer to q·n.
        for (i, &ti) in t.iter().enumerate() {
            assert!(ti > 20.0 && ti < 58.0);
            let q = (i + 1) as f64 / 4.0;
            let left = ys.iter().filter(|&&y| y <= ti).count();
            assert_eq!(left, (q * ys.len() as f64).round() as usize);
            assert_eq!(ti.fract(), 0.5);
        }
    }

    #[test]
    fn pure_node_has_no_cut_points() {
        assert!(candidate_thresholds(&[3.0; 50], &cfg(4, 1)).is_empty());
    }

    #[test]
    fn min_leaf_can_rule_out_every_cut() {
        assert!(candidate_thresholds(&[10.0, 10.0, 10.0, 50.0], &cfg(4, 2)).is_empty());
        assert_eq!(candidate_thresholds(&[10.0, 10.0, 10.0, 50.0], &cfg(4, 1)), vec![30.0]);
    }

    #[test]
    fn ties_move_to_nearest_boundary() {
        let ys = [1.0, 2.0, 2.0, 2.0, 2.0, 2.0, 3.0, 4.0];
        let c = TreeConfig {
            n_thresholds: 1,
            min_leaf: 1,
            ..TreeConfig::default()
        };
        // Median index 4 falls inside the run of 2s; nearest boundaries are
        // k = 1 (distance 3) and k = 6 (distance 2).
        assert_eq!(candidate_thresholds(&ys, &c), vec![2.5]);
    }

    fn two_segments() -> Dataset {
        // y = f on [0, 1], y = f + 10 on [2, 3].
        let mut f = Vec::new();
        let mut y = Vec::new();
        for i in 0..40 {
            let x = i as f64 / 39.0;
            f.push(x);
            y.push(x);
            f.push(x + 2.0);
            y.push(x + 12.0);
        }
        Dataset::new(f, y, 1).unwrap()
    }

    #[test]
    fn affine_data_has_nothing_to_gain() {
        let f: Vec<f64> = (0..60).map(|i| i as f64 / 10.0).collect();
        let y: Vec<f64> = f.iter().map(|x| 3.0 * x - 2.0).collect();
        let d = Dataset::new(f, y, 1).unwrap();
        let s = evaluate_split(&d, 5.0, &cfg(4, 5)).unwrap();
        assert!(s.reduction.abs() < 1e-6, "{}", s.reduction);
        let tree = build_tree(&d, &cfg(4, 5)).unwrap();
        assert_eq!(tree.leaf_count(), 1);
    }

    #[test]
    fn two_segment_split_by_hand() {
        let d = two_segments();
        let c = cfg(1, 5);
        let s = evaluate_split(&d, 5.0, &c).unwrap();
        assert_eq!(s.left_rows.len(), 40);
        assert_eq!(s.right_rows.len(), 40);
        assert!(s.left_sse < 1e-6 && s.right_sse < 1e-6);
        // Hand oracle for the parent: unregularized least squares on all rows.
        let parent = fit_ridge(d.features(), d.targets(), 1, 0.0).unwrap();
        let parent_sse = parent.sse(d.features(), d.targets());
        assert!(parent_sse > 100.0);
        assert!((s.reduction - parent_sse).abs() < 1e-3 * parent_sse);
        assert!((s.left.r[0] - 1.0).abs() < 1e-3 && (s.right.b - 10.0).abs() < 1e-2);
    }

    #[test]
    fn reduction_is_never_materially_negative() {
        let d = two_segments();
        let c = TreeConfig {
            fit: FitConfig {
                ridge_lambda: 0.0,
                ..FitConfig::default()
            },
            ..cfg(1, 3)
        };
        for t in candidate_thresholds(
            d.targets(),
            &TreeConfig {
                n_thresholds: 40,
                ..c.clone()
            },
        ) {
            let s = evaluate_split(&d, t, &c).unwrap();
            assert!(s.reduction >= -1e-9 * s.parent_sse, "t={t}: {}", s.reduction);
            assert_eq!(s.left_rows.len() + s.right_rows.len(), d.len());
        }
    }

    #[test]
    fn illegal_split_is_reported() {
        let d = two_segments();
        assert!(matches!(
            evaluate_split(&d, 0.01, &cfg(1, 5)),
            Err(TlmError::IllegalSplit { .. })
        ));
    }

    #[test]
    fn depth_zero_is_linear_regression() {
        let d = two_segments();
        let c = cfg(0, 5);
        let tree = build_tree(&d, &c).unwrap();
        assert_eq!(tree.leaf_count(), 1);
        assert_eq!(tree.root.regressor, fit_regressor(&d, &c.fit).unwrap());
    }

    #[test]
    fn recovers_two_segments() {
        let d = two_segments();
        let tree = build_tree(&d, &cfg(1, 5)).unwrap();
        let split = tree.root.split.as_ref().expect("root should split");
        assert!(split.threshold > 1.0 && split.threshold < 12.0);
        assert!(tree.training_sse() < 1e-6);
        assert_eq!(tree.depth(), 1);
    }

    #[test]
    fn thresholds_lie_inside_node_range() {
        let spec = crate::data::TessellationSpec::random_tree(3, 2, 5);
        let d = crate::data::generate_synthetic(&spec, 400, 0.3, 1).unwrap();
        let tree = build_tree(&d, &cfg(3, 10)).unwrap();
        for node in tree.nodes() {
            if let Some(s) = &node.split {
                assert!(s.threshold > node.stats.y_min && s.threshold < node.stats.y_max);
                assert_eq!(
                    s.left.stats.train_count + s.right.stats.train_count,
                    node.stats.train_count
                );
            }
        }
    }

    #[test]
    fn truncation_and_cells() {
        let d = two_segments();
        let tree = build_tree(&d, &cfg(1, 5)).unwrap();
        let flat = tree.truncate(0);
        assert_eq!(flat.leaf_count(), 1);
        let cells = flat.leaf_cells();
        assert_eq!(cells.len(), 1);
        assert!(cells[0].constraints.is_empty());

        let cells = tree.leaf_cells();
        assert_eq!(cells.len(), 2);
        assert_eq!(cells[0].constraints.len(), 1);
        let (a, b) = (&cells[0].constraints[0], &cells[1].constraints[0]);
        assert_eq!((a.w.clone(), a.c), (b.w.clone(), b.c));
        assert!(a.left && !b.left);
    }

    #[test]
    fn mixup_keeps_accounting_on_original_rows() {
        let d = two_segments();
        let c = TreeConfig {
            mixup: MixupConfig {
                enabled: true,
                ..MixupConfig::default()
            },
            ..cfg(1, 5)
        };
        let tree = build_tree(&d, &c).unwrap();
        assert_eq!(tree.root.stats.train_count, d.len());
        assert!(tree.root.split.is_some());
        assert_eq!(build_tree(&d, &c).unwrap(), tree);
    }

    #[test]
    fn classifier_partition_rule() {
        let d = two_segments();
        let c = TreeConfig {
            partition_by: PartitionRule::Classifier,
            ..cfg(1, 5)
        };
        let tree = build_tree(&d, &c).unwrap();
        let split = tree.root.split.as_ref().unwrap();
        assert_eq!(split.left.stats.train_count, 40);
        assert!(tree.training_sse() < 1e-6);
    }

    #[test]
    fn rejects_bad_config() {
        let d = two_segments();
        assert!(build_tree(&d, &cfg(63, 5)).is_err());
        assert!(build_tree(&d, &cfg(2, 0)).is_err());
    }
}
