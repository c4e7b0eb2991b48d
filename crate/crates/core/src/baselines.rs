//! Reference regressors: mean predictor, k-means with per-cluster ridge
//! regressors, and a ReLU multilayer perceptron.
//!
//! Plain linear regression is `linear::fit_regressor`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{derive_seed, Dataset};
use crate::error::{Result, TlmError};
use crate::linear::{fit_ridge, FitConfig, LinearRegressor};
use crate::nn::{minibatch_descent, Activation, Dense, TrainConfig};

pub const KMEANS_MAX_ITERS: usize = 100;
pub const DEFAULT_MLP_HIDDEN: [usize; 2] = [128, 128];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanPredictor {
    pub mean: f64,
}

impl MeanPredictor {
    pub fn predict(&self, _f: &[f64]) -> f64 {
        self.mean
    }
}

pub fn fit_mean(data: &Dataset) -> Result<MeanPredictor> {
    if data.is_empty() {
        return Err(TlmError::Empty("mean predictor needs at least one row".into()));
    }
    Ok(MeanPredictor {
        mean: data.mean_target(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansLR {
    pub k: usize,
    pub dim: usize,
    /// One row per cluster.
    pub centroids: Vec<Vec<f64>>,
    pub regressors: Vec<LinearRegressor>,
    pub iterations: usize,
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid; ties go to the lower index.
fn nearest(centroids: &[Vec<f64>], f: &[f64]) -> (usize, f64) {
    centroids
        .iter()
        .enumerate()
        .map(|(j, c)| (j, squared_distance(c, f)))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

impl KMeansLR {
    pub fn assign(&self, f: &[f64]) -> usize {
        nearest(&self.centroids, f).0
    }

    pub fn predict(&self, f: &[f64]) -> f64 {
        self.regressors[self.assign(f)].eval(f)
    }
}

/// Distance-weighted seeding: the first centroid is uniform, each further
/// one is drawn with probability proportional to squared distance from the
/// nearest centroid so far.
fn seed_centroids(data: &Dataset, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = data.len();
    let mut centroids = vec![data.row(rng.random_range(0..n)).to_vec()];
    let mut dist: Vec<f64> = data.rows().map(|r| squared_distance(r, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            dist.iter()
                .position(|&d| {
                    target -= d;
                    target < 0.0
                })
                .unwrap_or_else(|| dist.iter().rposition(|&d| d > 0.0).unwrap_or(n - 1))
        } else {
            rng.random_range(0..n)
        };
        let c = data.row(pick).to_vec();
        for (d, row) in dist.iter_mut().zip(data.rows()) {
            *d = d.min(squared_distance(row, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Lloyd's algorithm from distance-weighted seeding, then one ridge
/// regressor per cluster.
pub fn fit_kmeans_lr(data: &Dataset, k: usize, seed: u64, cfg: &FitConfig) -> Result<KMeansLR> {
    cfg.validate()?;
    let n = data.len();
    let d = data.dim();
    if k == 0 {
        return Err(TlmError::InvalidConfig("k must be >= 1".into()));
    }
    if k > n {
        return Err(TlmError::InvalidConfig(format!("k = {k} exceeds the {n} rows")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_centroids(data, k, &mut rng);
    let mut assignment = vec![usize::MAX; n];
    let mut iterations = 0;
    while iterations < KMEANS_MAX_ITERS {
        iterations += 1;
        let mut changed = false;
        let mut gaps = Vec::with_capacity(n);
        for (i, row) in data.rows().enumerate() {
            let (j, dist) = nearest(&centroids, row);
            changed |= assignment[i] != j;
            assignment[i] = j;
            gaps.push(dist);
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (row, &j) in data.rows().zip(&assignment) {
            counts[j] += 1;
            sums[j].iter_mut().zip(row).for_each(|(s, v)| *s += v);
        }
        for j in 0..k {
            if counts[j] > 0 {
                centroids[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            } else {
                // Re-seed at the row farthest from its current centroid.
                let far = (0..n)
                    .max_by(|&a, &b| gaps[a].total_cmp(&gaps[b]).then(b.cmp(&a)))
                    .expect("n >= 1");
                centroids[j] = data.row(far).to_vec();
                gaps[far] = 0.0;
                assignment[far] = j;
            }
        }
    }
    for (i, row) in data.rows().enumerate() {
        assignment[i] = nearest(&centroids, row).0;
    }
    let global_mean = data.mean_target();
    let regressors = (0..k)
        .map(|j| {
            let rows: Vec<usize> = (0..n).filter(|&i| assignment[i] == j).collect();
            if rows.is_empty() {
                return Ok(LinearRegressor::constant(d, global_mean));
            }
            let part = data.select(&rows)?;
            match fit_ridge(part.features(), part.targets(), d, cfg.ridge_lambda) {
                Err(TlmError::Singular) => Ok(LinearRegressor::constant(d, part.mean_target())),
                other => other,
            }
        })
        .collect::<Result<Vec<_>>>()?;
    log::debug!("k-means converged after {iterations} iterations");
    Ok(KMeansLR {
        k,
        dim: d,
        centroids,
        regressors,
        iterations,
    })
}

/// ReLU network with a scalar linear output. Inputs and targets are
/// standardized with training statistics before entering the layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpRegressor {
    pub dim: usize,
    pub layers: Vec<Dense>,
    pub input_mean: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub target_mean: f64,
    pub target_scale: f64,
}

impl MlpRegressor {
    fn new(dim: usize, hidden: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut fan_in = dim;
        for &width in hidden {
            layers.push(Dense::normal(
                fan_in,
                width,
                Activation::Relu,
                (2.0 / fan_in as f64).sqrt(),
                rng,
            ));
            fan_in = width;
        }
        let out_sd = if hidden.is_empty() {
            0.0
        } else {
            (1.0 / fan_in as f64).sqrt()
        };
        layers.push(Dense::normal(fan_in, 1, Activation::Identity, out_sd, rng));
        Self {
            dim,
            layers,
            input_mean: vec![0.0; dim],
            input_scale: vec![1.0; dim],
            target_mean: 0.0,
            target_scale: 1.0,
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.layers.iter().for_each(|l| l.write_params(&mut out));
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
        for layer in &mut self.layers {
            at += layer.read_params(&params[at..]);
        }
        Ok(())
    }

    fn standardize(&self, f: &[f64]) -> Vec<f64> {
        f.iter()
            .zip(self.input_mean.iter().zip(&self.input_scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    /// Activations of every layer, input first; the last holds the
    /// standardized output.
    fn activations(&self, z: Vec<f64>) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut acts = vec![z];
        let mut pres = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let pre = layer.linear(acts.last().expect("nonempty"));
            acts.push(pre.iter().map(|&a| layer.activation.apply(a)).collect());
            pres.push(pre);
        }
        (acts, pres)
    }

    pub fn predict(&self, f: &[f64]) -> f64 {
        let (acts, _) = self.activations(self.standardize(f));
        acts.last().expect("nonempty")[0] * self.target_scale + self.target_mean
    }

    fn accumulate_gradient(&self, f: &[f64], y: f64, grad: &mut [f64]) -> f64 {
        let (acts, pres) = self.activations(self.standardize(f));
        let err = acts.last().expect("nonempty")[0] - (y - self.target_mean) / self.target_scale;
        let mut delta = vec![2.0 * err];
        let mut offsets: Vec<usize> = self
            .layers
            .iter()
            .scan(0, |at, l| {
                let here = *at;
                *at += l.param_count();
                Some(here)
            })
            .collect();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            delta
                .iter_mut()
                .zip(&pres[idx])
                .for_each(|(d, &a)| *d *= layer.activation.derivative(a));
            let offset = offsets.pop().expect("one offset per layer");
            let slot = &mut grad[offset..offset + layer.param_count()];
            delta = layer.backward(&acts[idx], &delta, slot);
        }
        err * err
    }
}

/// Mean squared error in standardized target units.
pub fn mlp_loss(model: &MlpRegressor, data: &Dataset) -> f64 {
    data.rows()
        .zip(data.targets())
        .map(|(f, &y)| {
            let e = (model.predict(f) - y) / model.target_scale;
            e * e
        })
        .sum::<f64>()
        / data.len() as f64
}

fn mlp_gradient_rows(model: &MlpRegressor, data: &Dataset, rows: &[usize]) -> Vec<f64> {
    let mut grad = vec![0.0; model.param_count()];
    for &i in rows {
        model.accumulate_gradient(data.row(i), data.targets()[i], &mut grad);
    }
    let scale = 1.0 / rows.len().max(1) as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    grad
}

/// Gradient of `mlp_loss` with respect to `model.parameters()`.
pub fn mlp_gradient(model: &MlpRegressor, data: &Dataset) -> Vec<f64> {
    let rows: Vec<usize> = (0..data.len()).collect();
    mlp_gradient_rows(model, data, &rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpFit {
    pub model: MlpRegressor,
    pub loss_curve: Vec<f64>,
}

fn column_stats(data: &Dataset) -> (Vec<f64>, Vec<f64>) {
    let n = data.len() as f64;
    let d = data.dim();
    let mut mean = vec![0.0; d];
    data.rows()
        .for_each(|r| mean.iter_mut().zip(r).for_each(|(m, v)| *m += v / n));
    let mut var = vec![0.0; d];
    data.rows().for_each(|r| {
        var.iter_mut()
            .zip(r.iter().zip(&mean))
            .for_each(|(s, (v, m))| *s += (v - m) * (v - m) / n)
    });
    let scale = var
        .into_iter()
        .map(|v| if v > 1e-24 { v.sqrt() } else { 1.0 })
        .collect();
    (mean, scale)
}

/// Minibatch gradient descent on squared error. `cfg.dropout_enabled` has no
/// effect here.
pub fn fit_mlp(data: &Dataset, cfg: &TrainConfig, hidden: &[usize]) -> Result<MlpFit> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(TlmError::Empty("MLP needs at least one row".into()));
    }
    if hidden.contains(&0) {
        return Err(TlmError::InvalidConfig("hidden layer widths must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0x4d4c50));
    let mut model = MlpRegressor::new(data.dim(), hidden, &mut rng);
    let (mean, scale) = column_stats(data);
    model.input_mean = mean;
    model.input_scale = scale;
    model.target_mean = data.mean_target();
    let var = data
        .targets()
        .iter()
        .map(|y| (y - model.target_mean).powi(2))
        .sum::<f64>()
        / data.len() as f64;
    model.target_scale = if var > 1e-24 { var.sqrt() } else { 1.0 };

    let mut params = model.parameters();
    let mut probe = model.clone();
    let mut scratch = model.clone();
    let curve = minibatch_descent(
        &mut params,
        data.len(),
        cfg,
        |p| {
            probe.set_parameters(p).expect("parameter count fixed");
            mlp_loss(&probe, data)
        },
        |p, rows, _| {
            scratch.set_parameters(p).expect("parameter count fixed");
            mlp_gradient_rows(&scratch, data, rows)
        },
    )?;
    model.set_parameters(&params)?;
    Ok(MlpFit {
        model,
        loss_curve: curve,
    })
}

/// Draws `n` points around each center with isotropic `Normal(0, sd)` noise;
/// used by tests and examples.
pub fn gaussian_blobs(centers: &[Vec<f64>], n: usize, sd: f64, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sd).map_err(|e| TlmError::InvalidConfig(e.to_string()))?;
    let dim = centers.first().map_or(0, Vec::len);
    let mut features = Vec::with_capacity(centers.len() * n * dim);
    let mut targets = Vec::with_capacity(centers.len() * n);
    for (j, c) in centers.iter().enumerate() {
        for _ in 0..n {
            features.extend(c.iter().map(|v| v + noise.sample(&mut rng)));
            targets.push(j as f64);
        }
    }
    Dataset::new(features, targets, dim)
}
