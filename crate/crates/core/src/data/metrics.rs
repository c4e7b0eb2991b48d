use serde::{Deserialize, Serialize};

use crate::error::{Result, TlmError};

/// Mean absolute error and root mean squared error over `count` rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    pub rmse: f64,
    pub count: usize,
}

impl Metrics {
    pub fn mse(&self) -> f64 {
        self.rmse * self.rmse
    }
}

pub fn compute_metrics(predictions: &[f64], targets: &[f64]) -> Result<Metrics> {
    if predictions.len() != targets.len() {
        return Err(TlmError::LengthMismatch {
            left: predictions.len(),
            right: targets.len(),
        });
    }
    if targets.is_empty() {
        return Err(TlmError::Empty("no predictions to score".into()));
    }
    let n = targets.len() as f64;
    let (abs, sq) = predictions.iter().zip(targets).fold((0.0, 0.0), |(a, s), (p, y)| {
        let r = y - p;
        (a + r.abs(), s + r * r)
    });
    Ok(Metrics {
        mae: abs / n,
        rmse: (sq / n).sqrt(),
        count: targets.len(),
    })
}

pub fn sum_squared_error(predictions: &[f64], targets: &[f64]) -> f64 {
    predictions.iter().zip(targets).map(|(p, y)| (y - p) * (y - p)).sum()
}
