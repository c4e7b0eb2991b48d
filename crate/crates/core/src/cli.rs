//! Command-line front end: configuration, subcommands and report files.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::baselines::{fit_kmeans_lr, fit_mean, fit_mlp, DEFAULT_MLP_HIDDEN};
use crate::data::{
    compute_metrics, generate_synthetic, load_csv, read_table, write_csv, Dataset, Metrics, TessellationSpec,
};
use crate::error::{ErrorKind, Result, TlmError};
use crate::feature_opt::{train_features, FeatureNet};
use crate::linear::fit_regressor;
use crate::model::{TlmModel, TrainingEcho};
use crate::nn::TrainConfig;
use crate::routing::RoutingMode;
use crate::tree::{build_tree, PartitionRule, TlmNode, TreeConfig};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

pub fn exit_code(err: &TlmError) -> i32 {
    match err.kind() {
        ErrorKind::Config => EXIT_CONFIG,
        ErrorKind::Data => EXIT_DATA,
        ErrorKind::Numeric => EXIT_NUMERIC,
    }
}

/// Everything a training run needs. Loaded from TOML; unknown keys are
/// rejected. Relative paths resolve against the working directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub target_column: String,
    /// Routing used for reported test metrics: hard, soft, soft-full or oracle.
    pub routing: String,
    pub feature_opt: bool,
    /// Rebuild the tree once on the optimized features.
    pub iterate: bool,
    pub out: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub loss_curve: Option<PathBuf>,
    pub tree: TreeConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: None,
            test: None,
            target_column: "y".into(),
            routing: "hard".into(),
            feature_opt: false,
            iterate: false,
            out: None,
            report: None,
            loss_curve: None,
            tree: TreeConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| TlmError::InvalidConfig(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| TlmError::InvalidConfig(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn routing_mode(&self) -> Result<RoutingMode> {
        self.routing.parse()
    }

    pub fn validate(&self) -> Result<()> {
        self.tree.validate()?;
        self.routing_mode()?;
        if self.target_column.is_empty() {
            return Err(TlmError::InvalidConfig("target_column must not be empty".into()));
        }
        if self.iterate && !self.feature_opt {
            return Err(TlmError::InvalidConfig("iterate requires feature_opt".into()));
        }
        if self.feature_opt {
            self.train.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "tlm",
    version,
    about = "Train, evaluate and inspect tessellated linear models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a tree (and optionally a feature network) from a CSV file.
    Train(TrainArgs),
    /// Score a model on a CSV file.
    Evaluate(EvaluateArgs),
    /// Print the per-node tree report.
    Inspect(InspectArgs),
    /// Export leaf ids and predictions over a 2-D grid.
    Tessellate(TessellateArgs),
    /// Compare the model against reference regressors.
    Baselines(BaselinesArgs),
    /// Write a synthetic dataset drawn from a tessellation.
    Generate(GenerateArgs),
}

/// Run configuration flags. Each overrides the matching config-file key.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub target_column: Option<String>,
    #[arg(long)]
    pub routing: Option<String>,
    #[arg(long)]
    pub max_depth: Option<usize>,
    #[arg(long)]
    pub min_leaf: Option<usize>,
    #[arg(long)]
    pub n_thresholds: Option<usize>,
    #[arg(long)]
    pub purity_eps: Option<f64>,
    /// label or classifier.
    #[arg(long)]
    pub partition_by: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub ridge_lambda: Option<f64>,
    #[arg(long)]
    pub logit_l2: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub step: Option<f64>,
    #[arg(long)]
    pub mixup: bool,
    #[arg(long)]
    pub similarity_window: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub multiplier: Option<f64>,
    #[arg(long)]
    pub feature_opt: bool,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub feature_seed: Option<u64>,
    #[arg(long)]
    pub no_dropout: bool,
    #[arg(long)]
    pub iterate: bool,
}

macro_rules! override_with {
    ($($flag:expr => $slot:expr),* $(,)?) => {
        $(if let Some(v) = $flag.clone() {
            $slot = v;
        })*
    };
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if self.data.is_some() {
            cfg.data = self.data.clone();
        }
        if self.test.is_some() {
            cfg.test = self.test.clone();
        }
        override_with! {
            self.target_column => cfg.target_column,
            self.routing => cfg.routing,
            self.max_depth => cfg.tree.max_depth,
            self.min_leaf => cfg.tree.min_leaf,
            self.n_thresholds => cfg.tree.n_thresholds,
            self.purity_eps => cfg.tree.purity_eps,
            self.seed => cfg.tree.seed,
            self.ridge_lambda => cfg.tree.fit.ridge_lambda,
            self.logit_l2 => cfg.tree.fit.logit_l2,
            self.max_iters => cfg.tree.fit.max_iters,
            self.tol => cfg.tree.fit.tol,
            self.step => cfg.tree.fit.step,
            self.similarity_window => cfg.tree.mixup.similarity_window,
            self.alpha => cfg.tree.mixup.alpha,
            self.multiplier => cfg.tree.mixup.multiplier,
            self.learning_rate => cfg.train.learning_rate,
            self.epochs => cfg.train.epochs,
            self.batch_size => cfg.train.batch_size,
            self.feature_seed => cfg.train.seed,
        }
        if let Some(rule) = &self.partition_by {
            cfg.tree.partition_by = rule.parse::<PartitionRule>()?;
        }
        cfg.tree.mixup.enabled |= self.mixup;
        cfg.feature_opt |= self.feature_opt;
        cfg.iterate |= self.iterate;
        if self.no_dropout {
            cfg.train.dropout_enabled = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: ConfigArgs,
    /// Model file to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Training report (JSON).
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Feature-network loss curve (CSV).
    #[arg(long)]
    pub loss_curve: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// hard, soft, soft-full or oracle.
    #[arg(long, default_value = "hard")]
    pub mode: String,
    #[arg(long, default_value = "y")]
    pub target_column: String,
    /// Per-row predictions (CSV).
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Aggregate and per-leaf metrics (JSON); printed when omitted.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Labeled CSV for per-node test MAE.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long, default_value = "y")]
    pub target_column: String,
    /// Write the report as JSON here as well.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TessellateArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Two feature indices, e.g. `0,1`.
    #[arg(long, default_value = "0,1")]
    pub axes: String,
    /// Values of the remaining features (comma-separated, all `dim` entries).
    #[arg(long, allow_hyphen_values = true)]
    pub anchor: Option<String>,
    /// CSV whose ranges and column means set the grid and anchor defaults.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "y")]
    pub target_column: String,
    /// `lo,hi` for the first axis.
    #[arg(long, allow_hyphen_values = true)]
    pub x_range: Option<String>,
    /// `lo,hi` for the second axis.
    #[arg(long, allow_hyphen_values = true)]
    pub y_range: Option<String>,
    #[arg(long, default_value_t = 100)]
    pub resolution: usize,
    /// Truncation depths, e.g. `0,1,2`; every depth when omitted.
    #[arg(long)]
    pub depths: Option<String>,
    /// Grid CSV; printed when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct BaselinesArgs {
    #[command(flatten)]
    pub run: ConfigArgs,
    /// Clusters for k-means with per-cluster regressors.
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Hidden widths of the MLP, e.g. `128,128`.
    #[arg(long)]
    pub mlp_hidden: Option<String>,
    /// Comparison table (JSON); printed when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    /// Tessellation spec (JSON); a random tree-shaped one is used otherwise.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    pub dim: usize,
    #[arg(long, default_value_t = 2)]
    pub depth: u32,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the spec that generated the data.
    #[arg(long)]
    pub spec_out: Option<PathBuf>,
}

/// MAE, RMSE and MSE over `count` rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub mae: f64,
    pub rmse: f64,
    pub mse: f64,
    pub count: usize,
}

impl From<Metrics> for MetricsSummary {
    fn from(m: Metrics) -> Self {
        Self {
            mae: m.mae,
            rmse: m.rmse,
            mse: m.mse(),
            count: m.count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureReport {
    pub epochs: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub rows: usize,
    pub dim: usize,
    pub depth: usize,
    pub leaf_count: usize,
    /// Leaf squared error over the label partition, per truncation depth.
    pub sse_by_depth: Vec<f64>,
    pub mse_by_depth: Vec<f64>,
    /// Training metrics keyed by routing mode.
    pub training: BTreeMap<String, MetricsSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<BTreeMap<String, MetricsSummary>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_opt: Option<FeatureReport>,
    pub rebuilt_on_features: bool,
    pub wall_time_seconds: f64,
}

pub struct TrainOutcome {
    pub model: TlmModel,
    pub report: TrainReport,
    pub loss_curve: Option<Vec<f64>>,
}

const REPORT_MODES: [&str; 3] = ["hard", "soft", "oracle"];

fn metrics_by_mode(model: &TlmModel, data: &Dataset) -> Result<BTreeMap<String, MetricsSummary>> {
    REPORT_MODES
        .iter()
        .map(|name| {
            let pred = model.predict_dataset(data, name.parse()?)?;
            let metrics = pred
                .metrics
                .ok_or_else(|| TlmError::MissingTargets("no targets".into()))?;
            Ok((name.to_string(), metrics.into()))
        })
        .collect()
}

/// The full training pipeline on in-memory data.
pub fn train_on(data: &Dataset, test: Option<&Dataset>, cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let started = Instant::now();
    let mut tree = build_tree(data, &cfg.tree)?;
    let mut feature_net: Option<FeatureNet> = None;
    let mut curve = None;
    let mut feature_report = None;
    if cfg.feature_opt {
        let fit = train_features(&tree, data, &cfg.train)?;
        feature_report = Some(FeatureReport {
            epochs: cfg.train.epochs,
            initial_loss: fit.loss_curve[0],
            final_loss: *fit.loss_curve.last().expect("curve holds the initial loss"),
        });
        if cfg.iterate {
            let moved = fit.net.transform_dataset(data)?;
            tree = build_tree(&moved, &cfg.tree)?;
        }
        feature_net = Some(fit.net);
        curve = Some(fit.loss_curve);
    }
    let depth = tree.depth();
    let leaf_count = tree.leaf_count();
    let sse_by_depth = tree.sse_by_depth();
    let mut model = TlmModel::new(tree);
    model.feature_net = feature_net;
    model.training = TrainingEcho {
        tree: cfg.tree.clone(),
        feature_opt: cfg.feature_opt.then(|| cfg.train.clone()),
        iterate: cfg.iterate,
    };
    let training = metrics_by_mode(&model, data)?;
    let test = test.map(|t| metrics_by_mode(&model, t)).transpose()?;
    let n = data.len() as f64;
    let report = TrainReport {
        rows: data.len(),
        dim: data.dim(),
        depth,
        leaf_count,
        mse_by_depth: sse_by_depth.iter().map(|s| s / n).collect(),
        sse_by_depth,
        training,
        test,
        feature_opt: feature_report,
        rebuilt_on_features: cfg.feature_opt && cfg.iterate,
        wall_time_seconds: started.elapsed().as_secs_f64(),
    };
    Ok(TrainOutcome {
        model,
        report,
        loss_curve: curve,
    })
}

fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| TlmError::Format(e.to_string()))? + "\n";
    match path {
        Some(p) => fs::write(p, text).map_err(|e| TlmError::io(p, e)),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| TlmError::io("<stdout>", e)),
    }
}

fn csv_error(path: &Path) -> impl Fn(csv::Error) -> TlmError + '_ {
    move |e| TlmError::Csv(format!("{}: {e}", path.display()))
}

fn require_data(cfg: &RunConfig) -> Result<&Path> {
    cfg.data
        .as_deref()
        .ok_or_else(|| TlmError::InvalidConfig("no training data given (--data or `data` key)".into()))
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let mut cfg = args.run.resolve()?;
    if args.out.is_some() {
        cfg.out = args.out.clone();
    }
    if args.report.is_some() {
        cfg.report = args.report.clone();
    }
    if args.loss_curve.is_some() {
        cfg.loss_curve = args.loss_curve.clone();
    }
    let out = cfg
        .out
        .clone()
        .ok_or_else(|| TlmError::InvalidConfig("no model output path (--out or `out` key)".into()))?;
    let data = load_csv(require_data(&cfg)?, &cfg.target_column)?;
    let test = cfg
        .test
        .as_deref()
        .map(|p| load_csv(p, &cfg.target_column))
        .transpose()?;
    log::info!("training on {} rows x {} features", data.len(), data.dim());
    let outcome = train_on(&data, test.as_ref(), &cfg)?;
    outcome.model.save(&out)?;
    if let (Some(path), Some(curve)) = (&cfg.loss_curve, &outcome.loss_curve) {
        let mut w = csv::Writer::from_path(path).map_err(csv_error(path))?;
        w.write_record(["epoch", "loss"]).map_err(csv_error(path))?;
        for (epoch, loss) in curve.iter().enumerate() {
            w.write_record([epoch.to_string(), loss.to_string()])
                .map_err(csv_error(path))?;
        }
        w.flush().map_err(|e| TlmError::io(path, e))?;
    }
    match &cfg.report {
        Some(path) => write_json(Some(path), &outcome.report)?,
        None => eprintln!(
            "trained {} leaves (depth {}), training hard MAE {:.6}",
            outcome.report.leaf_count, outcome.report.depth, outcome.report.training["hard"].mae
        ),
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub mode: RoutingMode,
    pub rows: usize,
    pub metrics: Option<MetricsSummary>,
    pub per_leaf: BTreeMap<u64, MetricsSummary>,
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let mode: RoutingMode = args.mode.parse()?;
    let model = TlmModel::load(&args.model)?;
    let table = read_table(&args.data, &args.target_column)?;
    if table.dim != model.dim() {
        return Err(TlmError::DimensionMismatch {
            expected: model.dim(),
            got: table.dim,
        });
    }
    if mode == RoutingMode::Oracle && table.targets.is_none() {
        return Err(TlmError::MissingTargets(format!(
            "oracle routing needs the '{}' column",
            args.target_column
        )));
    }
    let pred = model.predict_rows(&table.features, table.targets.as_deref(), mode)?;
    if let Some(path) = &args.predictions {
        let mut w = csv::Writer::from_path(path).map_err(csv_error(path))?;
        w.write_record(["row_id", "y_true", "y_pred", "leaf_id"])
            .map_err(csv_error(path))?;
        for (i, (y, leaf)) in pred.predictions.iter().zip(&pred.leaf_ids).enumerate() {
            let truth = table.targets.as_ref().map_or(String::new(), |t| t[i].to_string());
            w.write_record([i.to_string(), truth, y.to_string(), leaf.to_string()])
                .map_err(csv_error(path))?;
        }
        w.flush().map_err(|e| TlmError::io(path, e))?;
    }
    let report = EvaluationReport {
        mode,
        rows: table.len(),
        metrics: pred.metrics.map(Into::into),
        per_leaf: pred.per_leaf.into_iter().map(|(k, m)| (k, m.into())).collect(),
    };
    write_json(args.metrics.as_deref(), &report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeReport {
    pub id: u64,
    pub depth: usize,
    pub leaf: bool,
    pub threshold: Option<f64>,
    pub train_count: usize,
    pub train_mae: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub test_count: Option<usize>,
    pub test_mae: Option<f64>,
}

/// Per-node report; test statistics follow the label path of each row.
pub fn inspect(model: &TlmModel, test: Option<&Dataset>) -> Result<Vec<NodeReport>> {
    let mut errors: BTreeMap<u64, (usize, f64)> = BTreeMap::new();
    if let Some(data) = test {
        let moved = model.transform_dataset(data)?;
        for (f, &y) in moved.rows().zip(moved.targets()) {
            let mut node = &model.tree.root;
            loop {
                let e = errors.entry(node.id).or_default();
                e.0 += 1;
                e.1 += (node.regressor.eval(f) - y).abs();
                match &node.split {
                    Some(s) => node = if y <= s.threshold { &s.left } else { &s.right },
                    None => break,
                }
            }
        }
    }
    Ok(model
        .tree
        .nodes()
        .into_iter()
        .map(|node: &TlmNode| {
            let test_stats = test.map(|_| errors.get(&node.id).copied().unwrap_or((0, 0.0)));
            NodeReport {
                id: node.id,
                depth: node.depth,
                leaf: node.is_leaf(),
                threshold: node.split.as_ref().map(|s| s.threshold),
                train_count: node.stats.train_count,
                train_mae: node.stats.train_mae,
                y_min: node.stats.y_min,
                y_max: node.stats.y_max,
                test_count: test_stats.map(|s| s.0),
                test_mae: test_stats.and_then(|(n, sum)| (n > 0).then(|| sum / n as f64)),
            }
        })
        .collect())
}

/// One line per node, indented by depth, in preorder.
pub fn render_report(nodes: &[NodeReport]) -> String {
    let mut out = String::new();
    for n in nodes {
        let indent = "  ".repeat(n.depth);
        let kind = match n.threshold {
            Some(t) => format!("split y <= {t:.6}"),
            None => "leaf".to_string(),
        };
        let test = match (n.test_count, n.test_mae) {
            (Some(c), Some(m)) => format!(" test_n={c} test_mae={m:.6}"),
            (Some(c), None) => format!(" test_n={c}"),
            _ => String::new(),
        };
        out.push_str(&format!(
            "{indent}node {} depth {} n={} train_mae={:.6}{test} {kind}\n",
            n.id, n.depth, n.train_count, n.train_mae
        ));
    }
    out
}

pub fn cmd_inspect(args: &InspectArgs) -> Result<()> {
    let model = TlmModel::load(&args.model)?;
    let test = args
        .test
        .as_deref()
        .map(|p| load_csv(p, &args.target_column))
        .transpose()?;
    let nodes = inspect(&model, test.as_ref())?;
    print!("{}", render_report(&nodes));
    if let Some(path) = &args.json {
        write_json(Some(path), &nodes)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridRow {
    pub depth: usize,
    pub x1: f64,
    pub x2: f64,
    pub leaf_id: u64,
    pub prediction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub axes: (usize, usize),
    pub anchor: Vec<f64>,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub resolution: usize,
    pub depths: Vec<usize>,
}

/// Hard-routed leaf and prediction at every grid point, per truncation.
pub fn tessellate(model: &TlmModel, grid: &GridSpec) -> Result<Vec<GridRow>> {
    let d = model.dim();
    let (a, b) = grid.axes;
    if d < 2 {
        return Err(TlmError::InvalidConfig(
            "tessellation needs at least two features".into(),
        ));
    }
    if a >= d || b >= d || a == b {
        return Err(TlmError::InvalidConfig(format!(
            "axes ({a}, {b}) must be two distinct indices below {d}"
        )));
    }
    if grid.anchor.len() != d {
        return Err(TlmError::InvalidConfig(format!(
            "anchor needs {d} values, got {}",
            grid.anchor.len()
        )));
    }
    if grid.resolution < 2 {
        return Err(TlmError::InvalidConfig("resolution must be >= 2".into()));
    }
    let step = |(lo, hi): (f64, f64), i: usize| lo + (hi - lo) * i as f64 / (grid.resolution - 1) as f64;
    let mut rows = Vec::with_capacity(grid.depths.len() * grid.resolution * grid.resolution);
    for &depth in &grid.depths {
        let truncated = TlmModel {
            tree: model.tree.truncate(depth),
            feature_net: model.feature_net.clone(),
            training: model.training.clone(),
        };
        for i in 0..grid.resolution {
            for j in 0..grid.resolution {
                let mut f = grid.anchor.clone();
                f[a] = step(grid.x_range, i);
                f[b] = step(grid.y_range, j);
                let (prediction, leaf_id) = truncated.predict(&f, RoutingMode::Hard, None)?;
                rows.push(GridRow {
                    depth,
                    x1: f[a],
                    x2: f[b],
                    leaf_id,
                    prediction,
                });
            }
        }
    }
    Ok(rows)
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| TlmError::InvalidConfig(format!("bad {what} entry '{}'", s.trim())))
        })
        .collect()
}

fn parse_range(text: &str, what: &str) -> Result<(f64, f64)> {
    match parse_list::<f64>(text, what)?.as_slice() {
        &[lo, hi] if lo < hi && lo.is_finite() && hi.is_finite() => Ok((lo, hi)),
        _ => Err(TlmError::InvalidConfig(format!("{what} must be `lo,hi` with lo < hi"))),
    }
}

pub fn cmd_tessellate(args: &TessellateArgs) -> Result<()> {
    let model = TlmModel::load(&args.model)?;
    let axes = match parse_list::<usize>(&args.axes, "axes")?.as_slice() {
        &[a, b] => (a, b),
        _ => return Err(TlmError::InvalidConfig("axes must name exactly two features".into())),
    };
    let table = args
        .data
        .as_deref()
        .map(|p| read_table(p, &args.target_column))
        .transpose()?;
    if let Some(t) = &table {
        if t.dim != model.dim() {
            return Err(TlmError::DimensionMismatch {
                expected: model.dim(),
                got: t.dim,
            });
        }
    }
    let column = |j: usize| -> Option<Vec<f64>> { table.as_ref().map(|t| (0..t.len()).map(|i| t.row(i)[j]).collect()) };
    let span = |j: usize| -> (f64, f64) {
        column(j)
            .map(|c| {
                c.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                    (lo.min(v), hi.max(v))
                })
            })
            .filter(|(lo, hi)| lo < hi)
            .unwrap_or((-1.0, 1.0))
    };
    let anchor = match &args.anchor {
        Some(text) => parse_list(text, "anchor")?,
        None => (0..model.dim())
            .map(|j| column(j).map_or(0.0, |c| c.iter().sum::<f64>() / c.len() as f64))
            .collect(),
    };
    let grid = GridSpec {
        axes,
        anchor,
        x_range: match &args.x_range {
            Some(t) => parse_range(t, "x-range")?,
            None => span(axes.0),
        },
        y_range: match &args.y_range {
            Some(t) => parse_range(t, "y-range")?,
            None => span(axes.1),
        },
        resolution: args.resolution,
        depths: match &args.depths {
            Some(t) => parse_list(t, "depths")?,
            None => (0..=model.tree.depth()).collect(),
        },
    };
    let rows = tessellate(&model, &grid)?;
    let sink: Box<dyn Write> = match &args.out {
        Some(p) => Box::new(fs::File::create(p).map_err(|e| TlmError::io(p, e))?),
        None => Box::new(std::io::stdout()),
    };
    let target = args.out.clone().unwrap_or_else(|| PathBuf::from("<stdout>"));
    let mut w = csv::Writer::from_writer(sink);
    for row in rows {
        w.serialize(row).map_err(csv_error(&target))?;
    }
    w.flush().map_err(|e| TlmError::io(&target, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: String,
    pub train: MetricsSummary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<MetricsSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub train_rows: usize,
    pub test_rows: Option<usize>,
    pub rows: Vec<ComparisonRow>,
}

fn score<P: Fn(&[f64]) -> f64>(data: &Dataset, predict: P) -> Result<MetricsSummary> {
    let preds: Vec<f64> = data.rows().map(predict).collect();
    Ok(compute_metrics(&preds, data.targets())?.into())
}

/// Fits every reference model and the tree on `train`, scoring each on
/// `train` and, when given, `test`.
pub fn compare(
    train: &Dataset,
    test: Option<&Dataset>,
    cfg: &RunConfig,
    k: usize,
    hidden: &[usize],
) -> Result<Comparison> {
    cfg.validate()?;
    let mut rows = Vec::new();
    let mut push = |name: &str, predict: &dyn Fn(&[f64]) -> f64| -> Result<()> {
        rows.push(ComparisonRow {
            model: name.to_string(),
            train: score(train, predict)?,
            test: test.map(|t| score(t, predict)).transpose()?,
        });
        Ok(())
    };
    let mean = fit_mean(train)?;
    push("common_sense", &|f| mean.predict(f))?;
    let lr = fit_regressor(train, &cfg.tree.fit)?;
    push("linear_regression", &|f| lr.eval(f))?;
    let km = fit_kmeans_lr(train, k.min(train.len()), cfg.tree.seed, &cfg.tree.fit)?;
    push("kmeans_lr", &|f| km.predict(f))?;
    let mlp = fit_mlp(train, &cfg.train, hidden)?;
    push("mlp", &|f| mlp.model.predict(f))?;

    let mut plain_cfg = cfg.clone();
    plain_cfg.feature_opt = false;
    plain_cfg.iterate = false;
    let plain = train_on(train, test, &plain_cfg)?;
    let mut tlm_rows = vec![("tlm_hard", "hard"), ("tlm_soft", "soft"), ("tlm_oracle", "oracle")]
        .into_iter()
        .map(|(name, mode)| {
            (
                name.to_string(),
                plain.report.training[mode],
                plain.report.test.as_ref().map(|t| t[mode]),
            )
        })
        .collect::<Vec<_>>();
    if cfg.feature_opt {
        let opt = train_on(train, test, cfg)?;
        tlm_rows.push((
            "tlm_feature_opt".into(),
            opt.report.training["hard"],
            opt.report.test.as_ref().map(|t| t["hard"]),
        ));
    }
    rows.extend(
        tlm_rows
            .into_iter()
            .map(|(model, train, test)| ComparisonRow { model, train, test }),
    );
    Ok(Comparison {
        train_rows: train.len(),
        test_rows: test.map(Dataset::len),
        rows,
    })
}

pub fn cmd_baselines(args: &BaselinesArgs) -> Result<()> {
    let cfg = args.run.resolve()?;
    let train = load_csv(require_data(&cfg)?, &cfg.target_column)?;
    let test = cfg
        .test
        .as_deref()
        .map(|p| load_csv(p, &cfg.target_column))
        .transpose()?;
    let hidden = match &args.mlp_hidden {
        Some(t) if t.trim().is_empty() => Vec::new(),
        Some(t) => parse_list(t, "mlp-hidden")?,
        None => DEFAULT_MLP_HIDDEN.to_vec(),
    };
    let table = compare(&train, test.as_ref(), &cfg, args.k, &hidden)?;
    write_json(args.out.as_deref(), &table)
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<()> {
    let spec = match &args.spec {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| TlmError::io(path, e))?;
            serde_json::from_str::<TessellationSpec>(&text).map_err(|e| TlmError::InvalidSpec(e.to_string()))?
        }
        None => {
            if args.dim == 0 {
                return Err(TlmError::InvalidConfig("dim must be >= 1".into()));
            }
            if args.depth > 12 {
                return Err(TlmError::InvalidConfig(
                    "random tessellations are limited to depth 12".into(),
                ));
            }
            TessellationSpec::random_tree(args.dim, args.depth, args.seed)
        }
    };
    if !(args.noise >= 0.0 && args.noise.is_finite()) {
        return Err(TlmError::InvalidConfig("noise must be a finite value >= 0".into()));
    }
    let data = generate_synthetic(&spec, args.n, args.noise, args.seed)?;
    write_csv(&args.out, &data, "y")?;
    if let Some(path) = &args.spec_out {
        write_json(Some(path), &spec)?;
    }
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Inspect(a) => cmd_inspect(a),
        Command::Tessellate(a) => cmd_tessellate(a),
        Command::Baselines(a) => cmd_baselines(a),
        Command::Generate(a) => cmd_generate(a),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Logging is configured from the `TLM_LOG` variable (e.g. `TLM_LOG=debug`).
pub fn init_logging() {
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("TLM_LOG", "warn"))
        .format_timestamp(None)
        .try_init();
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_rejects_unknown_keys() {
        assert!(matches!(
            RunConfig::from_toml("bogus = 1"),
            Err(TlmError::InvalidConfig(_))
        ));
        assert!(RunConfig::from_toml("[tree]\nmax_depht = 2").is_err());
        let cfg =
            RunConfig::from_toml("routing = \"soft\"\n[tree]\nmax_depth = 2\n[tree.fit]\nridge_lambda = 0.5").unwrap();
        assert_eq!(cfg.tree.max_depth, 2);
        assert_eq!(cfg.tree.fit.ridge_lambda, 0.5);
    }

    #[test]
    fn flags_override_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "[tree]\nmax_depth = 2\nmin_leaf = 7\n").unwrap();
        let args = ConfigArgs {
            config: Some(path),
            max_depth: Some(3),
            no_dropout: true,
            ..ConfigArgs::default()
        };
        let cfg = args.resolve().unwrap();
        assert_eq!(cfg.tree.max_depth, 3);
        assert_eq!(cfg.tree.min_leaf, 7);
        assert!(!cfg.train.dropout_enabled);
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let args = ConfigArgs {
            min_leaf: Some(0),
            ..ConfigArgs::default()
        };
        assert_eq!(exit_code(&args.resolve().unwrap_err()), EXIT_CONFIG);
        let args = ConfigArgs {
            routing: Some("sideways".into()),
            ..ConfigArgs::default()
        };
        assert_eq!(exit_code(&args.resolve().unwrap_err()), EXIT_CONFIG);
        let args = ConfigArgs {
            iterate: true,
            ..ConfigArgs::default()
        };
        assert!(args.resolve().is_err());
    }

    #[test]
    fn exit_codes_are_distinct() {
        assert_eq!(exit_code(&TlmError::InvalidConfig("x".into())), EXIT_CONFIG);
        assert_eq!(exit_code(&TlmError::Empty("x".into())), EXIT_DATA);
        assert_eq!(exit_code(&TlmError::Singular), EXIT_NUMERIC);
        assert_eq!(exit_code(&TlmError::Divergence { epoch: 3 }), EXIT_NUMERIC);
    }

    #[test]
    fn lists_and_ranges() {
        assert_eq!(parse_list::<usize>("0, 2", "axes").unwrap(), vec![0, 2]);
        assert!(parse_range("1,0", "x").is_err());
        assert_eq!(parse_range("-2,3", "x").unwrap(), (-2.0, 3.0));
    }
}
