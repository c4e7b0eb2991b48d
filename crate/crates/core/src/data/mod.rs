//! Datasets of `(feature vector, response)` rows and everything that feeds them:
//! CSV ingestion, train/test splitting, metrics, the synthetic tessellation
//! generator and response-local mixup.

mod metrics;
mod mixup;
mod synthetic;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, TlmError};

pub use metrics::{compute_metrics, sum_squared_error, Metrics};
pub(crate) use mixup::synthesize;
pub use mixup::{mix_rows, mixup_augment, MixupConfig, MixupReport};
pub use synthetic::{generate_synthetic, CellLaw, Hyperplane, TessellationSpec};

/// Row-major feature matrix paired with one response per row.
///
/// Always holds at least one row, at least one feature column, and only finite
/// values.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    targets: Vec<f64>,
    dim: usize,
}

impl Dataset {
    pub fn new(features: Vec<f64>, targets: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(TlmError::InvalidConfig("dataset dimension must be >= 1".into()));
        }
        if targets.is_empty() {
            return Err(TlmError::Empty("dataset has no rows".into()));
        }
        if features.len() != targets.len() * dim {
            return Err(TlmError::LengthMismatch {
                left: features.len() / dim,
                right: targets.len(),
            });
        }
        for (i, row) in features.chunks_exact(dim).enumerate() {
            if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                return Err(TlmError::NonFinite {
                    row: i + 1,
                    column: format!("f{j}"),
                });
            }
        }
        if let Some(i) = targets.iter().position(|v| !v.is_finite()) {
            return Err(TlmError::NonFinite {
                row: i + 1,
                column: "target".into(),
            });
        }
        Ok(Self { features, targets, dim })
    }

    pub fn from_rows(rows: &[Vec<f64>], targets: Vec<f64>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(TlmError::DimensionMismatch {
                expected: dim,
                got: bad.len(),
            });
        }
        Self::new(rows.concat(), targets, dim)
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    /// Never true for a constructed dataset; present for API symmetry.
    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.features.chunks_exact(self.dim)
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    /// New dataset holding the given rows, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut targets = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            targets.push(self.targets[i]);
        }
        Self::new(features, targets, self.dim)
    }

    /// Rows of `self` followed by rows of `other`.
    pub fn concat(&self, other: &Dataset) -> Result<Self> {
        if other.dim != self.dim {
            return Err(TlmError::DimensionMismatch {
                expected: self.dim,
                got: other.dim,
            });
        }
        let mut features = self.features.clone();
        features.extend_from_slice(&other.features);
        let mut targets = self.targets.clone();
        targets.extend_from_slice(&other.targets);
        Ok(Self {
            features,
            targets,
            dim: self.dim,
        })
    }

    /// Same targets, features replaced row by row.
    pub fn map_features<F>(&self, mut f: F) -> Result<Self>
    where
        F: FnMut(&[f64]) -> Result<Vec<f64>>,
    {
        let mut features = Vec::with_capacity(self.features.len());
        let mut dim = None;
        for row in self.rows() {
            let out = f(row)?;
            match dim {
                None => dim = Some(out.len()),
                Some(d) if d != out.len() => {
                    return Err(TlmError::DimensionMismatch {
                        expected: d,
                        got: out.len(),
                    })
                }
                _ => {}
            }
            features.extend(out);
        }
        Self::new(features, self.targets.clone(), dim.unwrap_or(0))
    }

    pub fn mean_target(&self) -> f64 {
        self.targets.iter().sum::<f64>() / self.len() as f64
    }

    /// `(min, max)` of the targets.
    pub fn target_range(&self) -> (f64, f64) {
        self.targets
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &y| {
                (lo.min(y), hi.max(y))
            })
    }
}

/// Features parsed from a CSV file, with the target column when present.
#[derive(Debug, Clone)]
pub struct Table {
    pub feature_names: Vec<String>,
    pub features: Vec<f64>,
    pub targets: Option<Vec<f64>>,
    pub dim: usize,
}

impl Table {
    pub fn len(&self) -> usize {
        self.features.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn into_dataset(self) -> Result<Dataset> {
        let targets = self
            .targets
            .ok_or_else(|| TlmError::MissingTargets("table has no target column".into()))?;
        Dataset::new(self.features, targets, self.dim)
    }
}

/// Reads a headered CSV. The target column is optional here; every other
/// column must be numeric and becomes a feature, in file order.
pub fn read_table(path: impl AsRef<Path>, target_column: &str) -> Result<Table> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| TlmError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = reader.headers().map_err(|e| TlmError::Csv(e.to_string()))?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(TlmError::Empty(format!("{} has no header", path.display())));
    }
    let target_idx = headers.iter().position(|h| h == target_column);
    let feature_cols: Vec<usize> = (0..headers.len()).filter(|&i| Some(i) != target_idx).collect();
    if feature_cols.is_empty() {
        return Err(TlmError::Empty(format!("{} has no feature columns", path.display())));
    }
    let dim = feature_cols.len();

    let parse = |row: usize, col: usize, raw: &str| -> Result<f64> {
        let value: f64 = raw.parse().map_err(|_| TlmError::Parse {
            row,
            column: headers[col].to_string(),
            value: raw.to_string(),
        })?;
        if value.is_finite() {
            Ok(value)
        } else {
            Err(TlmError::NonFinite {
                row,
                column: headers[col].to_string(),
            })
        }
    };

    let mut features = Vec::new();
    let mut targets = target_idx.map(|_| Vec::new());
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| TlmError::Csv(e.to_string()))?;
        for &c in &feature_cols {
            features.push(parse(row, c, record.get(c).unwrap_or(""))?);
        }
        if let (Some(t), Some(ts)) = (target_idx, targets.as_mut()) {
            ts.push(parse(row, t, record.get(t).unwrap_or(""))?);
        }
    }
    if features.is_empty() {
        return Err(TlmError::Empty(format!("{} has no data rows", path.display())));
    }
    Ok(Table {
        feature_names: feature_cols.iter().map(|&c| headers[c].to_string()).collect(),
        features,
        targets,
        dim,
    })
}

/// Loads a CSV whose `target_column` holds the response.
pub fn load_csv(path: impl AsRef<Path>, target_column: &str) -> Result<Dataset> {
    let table = read_table(path, target_column)?;
    if table.targets.is_none() {
        return Err(TlmError::MissingColumn(target_column.to_string()));
    }
    table.into_dataset()
}

/// Writes `data` as CSV with columns `f0..f{d-1}` and the target last.
pub fn write_csv(path: impl AsRef<Path>, data: &Dataset, target_column: &str) -> Result<()> {
    let path = path.as_ref();
    let mut writer = csv::Writer::from_path(path).map_err(|e| TlmError::Csv(e.to_string()))?;
    let mut header: Vec<String> = (0..data.dim()).map(|j| format!("f{j}")).collect();
    header.push(target_column.to_string());
    writer.write_record(&header).map_err(|e| TlmError::Csv(e.to_string()))?;
    for (row, y) in data.rows().zip(data.targets()) {
        let record: Vec<String> = row.iter().chain(std::iter::once(y)).map(f64::to_string).collect();
        writer.write_record(&record).map_err(|e| TlmError::Csv(e.to_string()))?;
    }
    writer.flush().map_err(|e| TlmError::io(path, e))
}

/// Shuffled disjoint split; `round(train_fraction * n)` rows go to the first side.
pub fn split(data: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(TlmError::InvalidConfig(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let n = data.len();
    let n_train = (train_fraction * n as f64).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(TlmError::InvalidConfig(format!(
            "train fraction {train_fraction} leaves one side of a {n}-row split empty"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok((data.select(&order[..n_train])?, data.select(&order[n_train..])?))
}

/// Mixes a base seed with a stream id (splitmix64) so sub-computations get
/// independent, reproducible generators.
pub(crate) fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
