//! The two learners fitted at every tree node: ridge regression with an
//! unpenalized bias, and L2-regularized logistic regression.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Result, TlmError};

/// Bias of the constant classifier returned for one-class training sets.
pub const SATURATED_LOGIT: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    /// L2 strength on the regression coefficients (the bias is not penalized).
    pub ridge_lambda: f64,
    /// L2 strength on the classifier weights, in standardized coordinates.
    pub logit_l2: f64,
    pub max_iters: usize,
    /// Gradient-norm stopping threshold for the classifier.
    pub tol: f64,
    /// Initial gradient-descent step.
    pub step: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            ridge_lambda: 1e-3,
            logit_l2: 1e-4,
            max_iters: 500,
            tol: 1e-6,
            step: 1.0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TlmError::InvalidConfig(m.into()));
        if !(self.ridge_lambda >= 0.0 && self.ridge_lambda.is_finite()) {
            return bad("ridge_lambda must be >= 0");
        }
        if !(self.logit_l2 >= 0.0 && self.logit_l2.is_finite()) {
            return bad("logit_l2 must be >= 0");
        }
        if self.tol.is_nan() || self.tol <= 0.0 {
            return bad("tol must be > 0");
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return bad("step must be > 0");
        }
        Ok(())
    }
}

/// `y = r·f + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearRegressor {
    pub r: Vec<f64>,
    pub b: f64,
}

impl LinearRegressor {
    pub fn constant(dim: usize, value: f64) -> Self {
        Self {
            r: vec![0.0; dim],
            b: value,
        }
    }

    pub fn dim(&self) -> usize {
        self.r.len()
    }

    /// Affine evaluation without a dimension check.
    #[inline]
    pub fn eval(&self, f: &[f64]) -> f64 {
        dot(&self.r, f) + self.b
    }

    pub fn predict(&self, f: &[f64]) -> Result<f64> {
        check_dim(self.r.len(), f.len())?;
        Ok(self.eval(f))
    }

    /// Sum of squared residuals over row-major `features`.
    pub fn sse(&self, features: &[f64], targets: &[f64]) -> f64 {
        features
            .chunks_exact(self.r.len())
            .zip(targets)
            .map(|(f, y)| {
                let e = y - self.eval(f);
                e * e
            })
            .sum()
    }
}

/// Hyperplane classifier; `prob(f) = sigmoid(w·f + c)` is the probability of
/// the left branch (`y <= t`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearClassifier {
    pub w: Vec<f64>,
    pub c: f64,
}

impl LinearClassifier {
    pub fn constant(dim: usize, left: bool) -> Self {
        Self {
            w: vec![0.0; dim],
            c: if left { SATURATED_LOGIT } else { -SATURATED_LOGIT },
        }
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    #[inline]
    pub fn logit(&self, f: &[f64]) -> f64 {
        dot(&self.w, f) + self.c
    }

    #[inline]
    pub fn prob_left(&self, f: &[f64]) -> f64 {
        sigmoid(self.logit(f))
    }

    /// Ties (`w·f + c = 0`) go left.
    #[inline]
    pub fn goes_left(&self, f: &[f64]) -> bool {
        self.logit(f) >= 0.0
    }

    pub fn classify(&self, f: &[f64]) -> Result<(f64, bool)> {
        check_dim(self.w.len(), f.len())?;
        let z = self.logit(f);
        Ok((sigmoid(z), z >= 0.0))
    }
}

pub fn predict_regressor(model: &LinearRegressor, f: &[f64]) -> Result<f64> {
    model.predict(f)
}

pub fn classify(model: &LinearClassifier, f: &[f64]) -> Result<(f64, bool)> {
    model.classify(f)
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
#[inline]
pub(crate) fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(TlmError::DimensionMismatch { expected, got })
    }
}

pub fn fit_regressor(data: &Dataset, cfg: &FitConfig) -> Result<LinearRegressor> {
    fit_ridge(data.features(), data.targets(), data.dim(), cfg.ridge_lambda)
}

/// Minimizes `Σ (y − r·f − b)² + λ‖r‖²` over row-major `features`.
///
/// Centering removes the bias from the system; the remaining `d × d`
/// regularized normal equations are solved by Cholesky factorization.
pub fn fit_ridge(features: &[f64], targets: &[f64], dim: usize, lambda: f64) -> Result<LinearRegressor> {
    let n = targets.len();
    if n == 0 {
        return Err(TlmError::Empty("cannot fit a regressor on zero rows".into()));
    }
    if dim == 0 || features.len() != n * dim {
        return Err(TlmError::DimensionMismatch {
            expected: n * dim.max(1),
            got: features.len(),
        });
    }
    let inv_n = 1.0 / n as f64;
    let mut mean_f = vec![0.0; dim];
    for row in features.chunks_exact(dim) {
        for (m, v) in mean_f.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean_f.iter_mut().for_each(|m| *m *= inv_n);
    let mean_y = targets.iter().sum::<f64>() * inv_n;

    let xc = DMatrix::from_fn(n, dim, |i, j| features[i * dim + j] - mean_f[j]);
    let yc = DVector::from_iterator(n, targets.iter().map(|y| y - mean_y));
    let mut gram = xc.tr_mul(&xc);
    for j in 0..dim {
        gram[(j, j)] += lambda;
    }
    let rhs = xc.tr_mul(&yc);

    let scale = (0..dim).map(|j| gram[(j, j)]).fold(0.0, f64::max);
    if scale == 0.0 {
        // Every feature is constant on these rows: only the bias is identifiable.
        return if lambda > 0.0 {
            Ok(LinearRegressor::constant(dim, mean_y))
        } else {
            Err(TlmError::Singular)
        };
    }
    let chol = gram.clone().cholesky().ok_or(TlmError::Singular)?;
    let min_pivot = chol
        .l_dirty()
        .diagonal()
        .iter()
        .map(|v| v * v)
        .fold(f64::INFINITY, f64::min);
    if lambda == 0.0 && min_pivot <= 1e-12 * scale {
        return Err(TlmError::Singular);
    }
    let r = chol.solve(&rhs);
    let r: Vec<f64> = r.iter().copied().collect();
    if r.iter().any(|v| !v.is_finite()) {
        return Err(TlmError::Singular);
    }
    let b = mean_y - dot(&r, &mean_f);
    Ok(LinearRegressor { r, b })
}

/// Result of a classifier fit including the optimizer trace.
#[derive(Debug, Clone)]
pub struct ClassifierFit {
    pub model: LinearClassifier,
    /// Objective after every accepted step, starting with the initial point.
    pub loss_history: Vec<f64>,
    pub converged: bool,
}

pub fn fit_classifier(features: &[f64], dim: usize, labels: &[f64], cfg: &FitConfig) -> Result<LinearClassifier> {
    fit_classifier_traced(features, dim, labels, cfg).map(|fit| fit.model)
}

/// Gradient descent with Armijo backtracking on mean binary cross-entropy
/// plus `logit_l2 · ‖w‖²`, in coordinates standardized per feature.
pub fn fit_classifier_traced(features: &[f64], dim: usize, labels: &[f64], cfg: &FitConfig) -> Result<ClassifierFit> {
    let n = labels.len();
    if n == 0 {
        return Err(TlmError::Empty("cannot fit a classifier on zero rows".into()));
    }
    if dim == 0 || features.len() != n * dim {
        return Err(TlmError::DimensionMismatch {
            expected: n * dim.max(1),
            got: features.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l != 0.0 && l != 1.0) {
        return Err(TlmError::NonBinaryLabels(bad));
    }
    let positives = labels.iter().filter(|&&l| l == 1.0).count();
    if positives == 0 || positives == n {
        return Ok(ClassifierFit {
            model: LinearClassifier::constant(dim, positives == n),
            loss_history: Vec::new(),
            converged: true,
        });
    }

    let inv_n = 1.0 / n as f64;
    let mut mean = vec![0.0; dim];
    for row in features.chunks_exact(dim) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m *= inv_n);
    let mut scale = vec![0.0; dim];
    for row in features.chunks_exact(dim) {
        for ((s, v), m) in scale.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    scale.iter_mut().for_each(|s| {
        let sd = (*s * inv_n).sqrt();
        *s = if sd > 1e-12 { sd } else { 1.0 };
    });
    let z: Vec<f64> = features
        .chunks_exact(dim)
        .flat_map(|row| {
            row.iter()
                .zip(&mean)
                .zip(&scale)
                .map(|((v, m), s)| (v - m) / s)
                .collect::<Vec<_>>()
        })
        .collect();

    // params = [v_0 .. v_{d-1}, bias]
    let objective = |p: &[f64]| -> f64 {
        let (v, c) = p.split_at(dim);
        let data: f64 = z
            .chunks_exact(dim)
            .zip(labels)
            .map(|(row, &l)| {
                let s = dot(v, row) + c[0];
                softplus(s) - l * s
            })
            .sum();
        data * inv_n + cfg.logit_l2 * dot(v, v)
    };
    let gradient = |p: &[f64], g: &mut [f64]| {
        g.iter_mut().for_each(|x| *x = 0.0);
        let (v, c) = p.split_at(dim);
        for (row, &l) in z.chunks_exact(dim).zip(labels) {
            let e = sigmoid(dot(v, row) + c[0]) - l;
            for (gj, x) in g[..dim].iter_mut().zip(row) {
                *gj += e * x;
            }
            g[dim] += e;
        }
        g.iter_mut().for_each(|x| *x *= inv_n);
        for (gj, vj) in g[..dim].iter_mut().zip(v) {
            *gj += 2.0 * cfg.logit_l2 * vj;
        }
    };

    let prior = positives as f64 * inv_n;
    let mut params = vec![0.0; dim + 1];
    params[dim] = (prior / (1.0 - prior)).ln();
    let mut loss = objective(&params);
    let mut history = vec![loss];
    let mut grad = vec![0.0; dim + 1];
    let mut trial = vec![0.0; dim + 1];
    let mut step = cfg.step;
    let mut converged = false;

    for _ in 0..cfg.max_iters {
        gradient(&params, &mut grad);
        let g2 = dot(&grad, &grad);
        if g2.sqrt() < cfg.tol {
            converged = true;
            break;
        }
        let mut accepted = false;
        for _ in 0..60 {
            for ((t, p), g) in trial.iter_mut().zip(&params).zip(&grad) {
                *t = p - step * g;
            }
            let candidate = objective(&trial);
            if candidate.is_finite() && candidate <= loss - 1e-4 * step * g2 {
                std::mem::swap(&mut params, &mut trial);
                loss = candidate;
                history.push(loss);
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // No descent possible at machine precision.
            converged = true;
            break;
        }
        step = (step * 2.0).min(1e6);
    }

    let (v, c) = params.split_at(dim);
    let w: Vec<f64> = v.iter().zip(&scale).map(|(vj, s)| vj / s).collect();
    let c = c[0] - dot(&w, &mean);
    Ok(ClassifierFit {
        model: LinearClassifier { w, c },
        loss_history: history,
        converged,
    })
}
