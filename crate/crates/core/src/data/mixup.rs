use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Result, TlmError};

/// Mixup restricted to partners whose responses differ by at most
/// `similarity_window`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MixupConfig {
    pub enabled: bool,
    pub similarity_window: f64,
    pub alpha: f64,
    /// Synthetic rows per original row.
    pub multiplier: f64,
}

impl Default for MixupConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            similarity_window: 2.0,
            alpha: 0.4,
            multiplier: 1.0,
        }
    }
}

impl MixupConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.similarity_window > 0.0 && self.similarity_window.is_finite()) {
            return Err(TlmError::InvalidConfig("mixup similarity_window must be > 0".into()));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(TlmError::InvalidConfig("mixup alpha must be > 0".into()));
        }
        if !(self.multiplier >= 0.0 && self.multiplier.is_finite()) {
            return Err(TlmError::InvalidConfig("mixup multiplier must be >= 0".into()));
        }
        Ok(())
    }

    fn is_active(&self) -> bool {
        self.enabled && self.multiplier > 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MixupReport {
    pub generated: usize,
    /// Anchors dropped because no partner was inside the window.
    pub skipped: usize,
}

/// `(λ f_i + (1 − λ) f_j, λ y_i + (1 − λ) y_j)`.
pub fn mix_rows(fi: &[f64], yi: f64, fj: &[f64], yj: f64, lambda: f64) -> (Vec<f64>, f64) {
    let f = fi
        .iter()
        .zip(fj)
        .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
        .collect();
    (f, lambda * yi + (1.0 - lambda) * yj)
}

/// Synthetic rows only, row-major. Empty when mixup is off or the data has
/// fewer than two rows.
pub(crate) fn synthesize(data: &Dataset, cfg: &MixupConfig, seed: u64) -> Result<(Vec<f64>, Vec<f64>, MixupReport)> {
    cfg.validate()?;
    let n = data.len();
    if !cfg.is_active() || n < 2 {
        return Ok((Vec::new(), Vec::new(), MixupReport::default()));
    }
    let ys = data.targets();
    let mut by_y: Vec<usize> = (0..n).collect();
    by_y.sort_by(|&a, &b| ys[a].total_cmp(&ys[b]).then(a.cmp(&b)));
    let mut rank = vec![0usize; n];
    for (pos, &i) in by_y.iter().enumerate() {
        rank[i] = pos;
    }
    let sorted: Vec<f64> = by_y.iter().map(|&i| ys[i]).collect();

    let beta = Beta::new(cfg.alpha, cfg.alpha).map_err(|e| TlmError::InvalidConfig(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = (cfg.multiplier * n as f64).floor() as usize;
    let d = data.dim();
    let mut features = Vec::with_capacity(total * d);
    let mut targets = Vec::with_capacity(total);
    let mut report = MixupReport::default();

    for s in 0..total {
        let i = s % n;
        let yi = ys[i];
        let lo = sorted.partition_point(|&y| y < yi - cfg.similarity_window);
        let hi = sorted.partition_point(|&y| y <= yi + cfg.similarity_window);
        // [lo, hi) contains the anchor itself.
        let eligible = hi - lo - 1;
        if eligible == 0 {
            report.skipped += 1;
            continue;
        }
        let mut pos = lo + rng.random_range(0..eligible);
        if pos >= rank[i] {
            pos += 1;
        }
        let j = by_y[pos];
        let lambda: f64 = beta.sample(&mut rng);
        let (f, y) = mix_rows(data.row(i), yi, data.row(j), ys[j], lambda);
        features.extend(f);
        targets.push(y);
        report.generated += 1;
    }
    Ok((features, targets, report))
}

/// Original rows (verbatim, in order) followed by `floor(multiplier * n)`
/// attempted mixes of each anchor with a response-local partner.
pub fn mixup_augment(data: &Dataset, cfg: &MixupConfig, seed: u64) -> Result<(Dataset, MixupReport)> {
    if cfg.is_active() && data.len() < 2 {
        return Err(TlmError::Empty("mixup needs at least two rows".into()));
    }
    let (features, targets, report) = synthesize(data, cfg, seed)?;
    if targets.is_empty() {
        return Ok((data.clone(), report));
    }
    let extra = Dataset::new(features, targets, data.dim())?;
    Ok((data.concat(&extra)?, report))
}
