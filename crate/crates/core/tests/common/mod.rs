#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tlm_core::baselines::MlpRegressor;
use tlm_core::data::{generate_synthetic, CellLaw, Dataset, Hyperplane, TessellationSpec};
use tlm_core::feature_opt::FeatureNet;
use tlm_core::nn::Activation;
use tlm_core::tree::{build_tree, TlmTree, TreeConfig};

/// Four quadrant cells split first on `f0 = 0`, then on `f1 = 0`, with
/// response ranges roughly [0, 5], [10, 15], [30, 35] and [40, 45].
pub fn recovery_spec(margin: f64) -> TessellationSpec {
    let plane = |w: [f64; 2]| Hyperplane { w: w.to_vec(), c: 0.0 };
    let cell = |signs: [i8; 3], r: [f64; 2], b: f64| CellLaw {
        signs: signs.to_vec(),
        r: r.to_vec(),
        b,
    };
    TessellationSpec {
        bounds: None,
        hyperplanes: vec![plane([1.0, 0.0]), plane([0.0, 1.0]), plane([0.0, 1.0])],
        cells: vec![
            cell([1, 1, 0], [2.5, 2.5], 0.0),
            cell([1, -1, 0], [2.5, -2.5], 10.0),
            cell([-1, 0, 1], [-2.5, 2.5], 30.0),
            cell([-1, 0, -1], [-2.5, -2.5], 40.0),
        ],
        margin,
    }
}

/// Rows with features uniform in [-1, 1] and targets from a random affine
/// law plus uniform noise.
pub fn random_linear(n: usize, d: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
    let mut features = Vec::with_capacity(n * d);
    let mut targets = Vec::with_capacity(n);
    for _ in 0..n {
        let row: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        targets.push(row.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>() + rng.random_range(-0.5..0.5));
        features.extend(row);
    }
    Dataset::new(features, targets, d).unwrap()
}

/// Synthetic data from a random tree-shaped tessellation and a tree trained
/// on it.
pub fn random_problem(
    dim: usize,
    gen_depth: u32,
    n: usize,
    noise: f64,
    cfg: &TreeConfig,
    seed: u64,
) -> (TlmTree, Dataset) {
    let spec = TessellationSpec::random_tree(dim, gen_depth, seed);
    let data = generate_synthetic(&spec, n, noise, seed.wrapping_mul(31).wrapping_add(7)).unwrap();
    (build_tree(&data, cfg).unwrap(), data)
}

pub fn random_point(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(-scale..scale)).collect()
}

/// Solves `a x = b` by Gauss-Jordan elimination with partial pivoting.
#[allow(clippy::needless_range_loop)]
pub fn gauss_jordan(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        let p = a[col][col];
        assert!(p.abs() > 1e-300, "singular oracle system");
        for k in 0..n {
            a[col][k] /= p;
        }
        b[col] /= p;
        for row in 0..n {
            if row != col {
                let factor = a[row][col];
                if factor != 0.0 {
                    for k in 0..n {
                        a[row][k] -= factor * a[col][k];
                    }
                    b[row] -= factor * b[col];
                }
            }
        }
    }
    b
}

/// Ridge solution `(r, b)` from the uncentered normal equations with an
/// unpenalized intercept column.
pub fn normal_equation_ridge(data: &Dataset, lambda: f64) -> (Vec<f64>, f64) {
    let d = data.dim();
    let m = d + 1;
    let mut a = vec![vec![0.0; m]; m];
    let mut rhs = vec![0.0; m];
    for (row, &y) in data.rows().zip(data.targets()) {
        let x: Vec<f64> = row.iter().copied().chain(std::iter::once(1.0)).collect();
        for i in 0..m {
            for j in 0..m {
                a[i][j] += x[i] * x[j];
            }
            rhs[i] += x[i] * y;
        }
    }
    for (i, row) in a.iter_mut().enumerate().take(d) {
        row[i] += lambda;
    }
    let sol = gauss_jordan(a, rhs);
    (sol[..d].to_vec(), sol[d])
}

/// Smallest |pre-activation| over every hidden unit and row. Finite
/// differences are only meaningful when this is well above the step.
pub fn net_kink_margin(net: &FeatureNet, data: &Dataset) -> f64 {
    let mut margin = f64::INFINITY;
    for row in data.rows() {
        let mut u = row.to_vec();
        for block in &net.blocks {
            let pre = block.first.linear(&u);
            margin = pre.iter().fold(margin, |m, v| m.min(v.abs()));
            let hidden: Vec<f64> = pre.iter().map(|&v| block.first.activation.apply(v)).collect();
            let pre = block.second.linear(&hidden);
            margin = pre.iter().fold(margin, |m, v| m.min(v.abs()));
            for (x, v) in u.iter_mut().zip(&pre) {
                *x += block.second.activation.apply(*v);
            }
        }
    }
    margin
}

pub fn mlp_kink_margin(model: &MlpRegressor, data: &Dataset) -> f64 {
    let mut margin = f64::INFINITY;
    for row in data.rows() {
        let mut x: Vec<f64> = row
            .iter()
            .zip(model.input_mean.iter().zip(&model.input_scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect();
        for layer in &model.layers {
            let pre = layer.linear(&x);
            if layer.activation != Activation::Identity {
                margin = pre.iter().fold(margin, |m, v| m.min(v.abs()));
            }
            x = pre.iter().map(|&v| layer.activation.apply(v)).collect();
        }
    }
    margin
}
