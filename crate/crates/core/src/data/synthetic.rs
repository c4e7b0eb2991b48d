use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{derive_seed, Dataset};
use crate::error::{Result, TlmError};

const PROBE_DRAWS: usize = 200_000;
const DRAWS_PER_SAMPLE: usize = 100_000;

/// `{f : w·f + c = 0}`; the positive side is `w·f + c >= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyperplane {
    pub w: Vec<f64>,
    pub c: f64,
}

impl Hyperplane {
    pub fn eval(&self, f: &[f64]) -> f64 {
        self.w.iter().zip(f).map(|(w, x)| w * x).sum::<f64>() + self.c
    }

    fn distance(&self, f: &[f64]) -> f64 {
        let norm = self.w.iter().map(|w| w * w).sum::<f64>().sqrt();
        self.eval(f).abs() / norm
    }
}

/// One cell of a tessellation: which side of each hyperplane it lies on
/// (`1` positive, `-1` negative, `0` unconstrained) and its affine law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellLaw {
    pub signs: Vec<i8>,
    pub r: Vec<f64>,
    pub b: f64,
}

impl CellLaw {
    pub fn eval(&self, f: &[f64]) -> f64 {
        self.r.iter().zip(f).map(|(r, x)| r * x).sum::<f64>() + self.b
    }
}

/// Piecewise-affine ground truth over a box: the JSON document
/// `{box, hyperplanes: [{w, c}], cells: [{signs, r, b}], margin}`.
///
/// `box` defaults to `[-1, 1]^d`. Samples closer than `margin` to any
/// hyperplane bounding their cell are rejected, which leaves a gap between
/// neighbouring cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TessellationSpec {
    #[serde(rename = "box", default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<Vec<[f64; 2]>>,
    #[serde(default)]
    pub hyperplanes: Vec<Hyperplane>,
    pub cells: Vec<CellLaw>,
    #[serde(default)]
    pub margin: f64,
}

impl TessellationSpec {
    pub fn dim(&self) -> usize {
        self.cells.first().map_or(0, |c| c.r.len())
    }

    pub fn bounds(&self) -> Vec<[f64; 2]> {
        self.bounds.clone().unwrap_or_else(|| vec![[-1.0, 1.0]; self.dim()])
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TlmError::InvalidSpec(m));
        let d = self.dim();
        if self.cells.is_empty() {
            return bad("no cells".into());
        }
        if d == 0 {
            return bad("cells must have at least one coefficient".into());
        }
        for (i, h) in self.hyperplanes.iter().enumerate() {
            if h.w.len() != d {
                return bad(format!("hyperplane {i} has {} weights, expected {d}", h.w.len()));
            }
            if !h.c.is_finite() || h.w.iter().any(|w| !w.is_finite()) || h.w.iter().all(|&w| w == 0.0) {
                return bad(format!("hyperplane {i} has a zero or non-finite normal"));
            }
        }
        for (i, cell) in self.cells.iter().enumerate() {
            if cell.r.len() != d {
                return bad(format!("cell {i} has {} coefficients, expected {d}", cell.r.len()));
            }
            if cell.signs.len() != self.hyperplanes.len() {
                return bad(format!(
                    "cell {i} has {} signs for {} hyperplanes",
                    cell.signs.len(),
                    self.hyperplanes.len()
                ));
            }
            if cell.signs.iter().any(|s| !(-1..=1).contains(s)) {
                return bad(format!("cell {i} has a sign outside -1, 0, 1"));
            }
            if !cell.b.is_finite() || cell.r.iter().any(|r| !r.is_finite()) {
                return bad(format!("cell {i} has a non-finite law"));
            }
        }
        for i in 0..self.cells.len() {
            for j in i + 1..self.cells.len() {
                let disjoint = self.cells[i]
                    .signs
                    .iter()
                    .zip(&self.cells[j].signs)
                    .any(|(a, b)| a * b == -1);
                if !disjoint {
                    return bad(format!("cells {i} and {j} overlap"));
                }
            }
        }
        let bounds = self.bounds();
        if bounds.len() != d {
            return bad(format!("box has {} intervals, expected {d}", bounds.len()));
        }
        if bounds
            .iter()
            .any(|[lo, hi]| !(lo.is_finite() && hi.is_finite() && lo < hi))
        {
            return bad("box intervals must be finite with lo < hi".into());
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return bad("margin must be finite and >= 0".into());
        }
        Ok(())
    }

    /// Index of the cell containing `f`, if any.
    pub fn cell_of(&self, f: &[f64]) -> Option<usize> {
        self.cells.iter().position(|cell| {
            cell.signs.iter().zip(&self.hyperplanes).all(|(&s, h)| match s {
                1 => h.eval(f) >= 0.0,
                -1 => h.eval(f) < 0.0,
                _ => true,
            })
        })
    }

    /// Noiseless response at `f`, if `f` lies in some cell.
    pub fn evaluate(&self, f: &[f64]) -> Option<f64> {
        self.cell_of(f).map(|c| self.cells[c].eval(f))
    }

    fn admissible(&self, f: &[f64]) -> Option<usize> {
        let cell = self.cell_of(f)?;
        if self.margin > 0.0 {
            let clear = self.cells[cell]
                .signs
                .iter()
                .zip(&self.hyperplanes)
                .all(|(&s, h)| s == 0 || h.distance(f) >= self.margin);
            if !clear {
                return None;
            }
        }
        Some(cell)
    }

    /// Random tree-shaped tessellation of depth `depth` in `dim` dimensions.
    ///
    /// Hyperplanes are stored heap-ordered (node `k` has children `2k+1`,
    /// `2k+2`); each leaf cell carries `+1` for "left" (`w·f + c >= 0`) along
    /// its path. Each hyperplane passes through the sample mean of its own
    /// region (inside it, by convexity), so no cell degenerates to a sliver.
    pub fn random_tree(dim: usize, depth: u32, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let internal = (1usize << depth) - 1;
        let mut hyperplanes: Vec<Hyperplane> = Vec::with_capacity(internal);
        for k in 0..internal {
            let path = heap_path(k);
            let mut anchor = vec![0.0; dim];
            let mut hits = 0usize;
            for _ in 0..2000 {
                let p: Vec<f64> = (0..dim).map(|_| rng.random_range(-0.8..0.8)).collect();
                if path
                    .iter()
                    .all(|&(node, left)| (hyperplanes[node].eval(&p) >= 0.0) == left)
                {
                    anchor.iter_mut().zip(&p).for_each(|(a, v)| *a += v);
                    hits += 1;
                }
            }
            if hits > 0 {
                anchor.iter_mut().for_each(|a| *a /= hits as f64);
            }
            let mut w: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            w.iter_mut().for_each(|v| *v /= norm);
            let c = -w.iter().zip(&anchor).map(|(a, b)| a * b).sum::<f64>();
            hyperplanes.push(Hyperplane { w, c });
        }
        let cells = (internal..2 * internal + 1)
            .map(|leaf| {
                let mut signs = vec![0i8; internal];
                for (node, left) in heap_path(leaf) {
                    signs[node] = if left { 1 } else { -1 };
                }
                let r = (0..dim).map(|_| 3.0 * rng.sample::<f64, _>(StandardNormal)).collect();
                CellLaw {
                    signs,
                    r,
                    b: rng.random_range(-5.0..5.0),
                }
            })
            .collect();
        Self {
            bounds: None,
            hyperplanes,
            cells,
            margin: 0.0,
        }
    }
}

/// Ancestors of heap node `k`, root first, with the branch taken at each.
fn heap_path(mut k: usize) -> Vec<(usize, bool)> {
    let mut path = Vec::new();
    while k > 0 {
        let parent = (k - 1) / 2;
        path.push((parent, k == 2 * parent + 1));
        k = parent;
    }
    path.reverse();
    path
}

fn draw(rng: &mut ChaCha8Rng, bounds: &[[f64; 2]]) -> Vec<f64> {
    bounds.iter().map(|&[lo, hi]| rng.random_range(lo..hi)).collect()
}

/// Samples `n` points uniformly from the box (minus the margin bands) and
/// labels them with their cell's affine law plus `Normal(0, noise_sd)` noise.
pub fn generate_synthetic(spec: &TessellationSpec, n: usize, noise_sd: f64, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    if n == 0 {
        return Err(TlmError::Empty("requested zero samples".into()));
    }
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(TlmError::InvalidConfig(format!(
            "noise_sd must be >= 0, got {noise_sd}"
        )));
    }
    let bounds = spec.bounds();

    let mut probe = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xCE11));
    let mut seen = vec![false; spec.cells.len()];
    let mut remaining = seen.len();
    for _ in 0..PROBE_DRAWS {
        if remaining == 0 {
            break;
        }
        if let Some(c) = spec.admissible(&draw(&mut probe, &bounds)) {
            if !seen[c] {
                seen[c] = true;
                remaining -= 1;
            }
        }
    }
    if let Some(empty) = seen.iter().position(|s| !s) {
        return Err(TlmError::EmptyCell(empty));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_sd).map_err(|e| TlmError::InvalidConfig(e.to_string()))?;
    let d = spec.dim();
    let mut features = Vec::with_capacity(n * d);
    let mut targets = Vec::with_capacity(n);
    for _ in 0..n {
        let (f, cell) = (0..DRAWS_PER_SAMPLE)
            .find_map(|_| {
                let f = draw(&mut rng, &bounds);
                spec.admissible(&f).map(|c| (f, c))
            })
            .ok_or_else(|| TlmError::InvalidSpec("no admissible points in the sampling box".into()))?;
        let mut y = spec.cells[cell].eval(&f);
        if noise_sd > 0.0 {
            y += noise.sample(&mut rng);
        }
        features.extend(f);
        targets.push(y);
    }
    Dataset::new(features, targets, d)
}
