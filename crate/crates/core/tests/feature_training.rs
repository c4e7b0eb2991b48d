use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tlm_core::data::Dataset;
use tlm_core::feature_opt::train_features;
use tlm_core::model::TlmModel;
use tlm_core::nn::TrainConfig;
use tlm_core::routing::RoutingMode;
use tlm_core::tree::{build_tree, TreeConfig};

/// Two cells split by `z0 = 0` in a latent space, observed through a
/// parabolic bend, so no hyperplane separates them in the observed features.
fn bent(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    for _ in 0..n {
        let z: [f64; 2] = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let base = if z[0] < 0.0 { 0.0 } else { 2.0 };
        targets.push(base + 0.2 * z[0] + 0.1 * z[1]);
        rows.push(vec![z[0] + 0.8 * z[1] * z[1] - 0.4, z[1]]);
    }
    Dataset::from_rows(&rows, targets).unwrap()
}

#[test]
fn learned_features_unbend_a_curved_boundary() {
    let train = bent(1000, 1);
    let test = bent(1000, 2);
    let tree = build_tree(
        &train,
        &TreeConfig {
            max_depth: 1,
            ..TreeConfig::default()
        },
    )
    .unwrap();
    let frozen = TlmModel::new(tree.clone()).to_json();
    let plain = TlmModel::new(tree.clone());
    let mse = |m: &TlmModel| {
        m.predict_dataset(&test, RoutingMode::Hard)
            .unwrap()
            .metrics
            .unwrap()
            .mse()
    };

    // Identity features are first-order optimal for the fitted tree, so the
    // escape from the near-identity start needs large steps.
    let cfg = TrainConfig {
        learning_rate: 3.0,
        epochs: 600,
        seed: 3,
        ..TrainConfig::default()
    };
    let fit = train_features(&tree, &train, &cfg).unwrap();
    assert!(fit.loss_curve.last().unwrap() < &fit.loss_curve[0]);

    let mut learned = plain.clone();
    learned.feature_net = Some(fit.net);
    let (before, after) = (mse(&plain), mse(&learned));
    assert!(after < 0.9 * before, "hard test MSE {before} -> {after}");
    assert_eq!(TlmModel::new(tree).to_json(), frozen);
}
