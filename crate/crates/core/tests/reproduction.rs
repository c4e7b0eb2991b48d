//! Speaker-age reproduction on user-supplied embeddings.
//!
//! Needs two CSV files of 192-dimensional speaker embeddings with an age
//! column, one row per utterance:
//!
//! ```text
//! TLM_REPRO_TRAIN=train.csv TLM_REPRO_TEST=test.csv [TLM_REPRO_TARGET=age] \
//!     cargo test -p tlm-core --release --test reproduction -- --ignored --nocapture
//! ```

use std::path::PathBuf;

use tlm_core::cli::{train_on, RunConfig};
use tlm_core::data::load_csv;

const TOLERANCE: f64 = 0.15;

fn env_path(name: &str) -> PathBuf {
    std::env::var_os(name)
        .map(PathBuf::from)
        .unwrap_or_else(|| panic!("set {name} to an embedding CSV"))
}

#[test]
#[ignore = "needs external speaker embeddings"]
fn age_mae_matches_the_reference_table() {
    let target = std::env::var("TLM_REPRO_TARGET").unwrap_or_else(|_| "age".into());
    let train = load_csv(env_path("TLM_REPRO_TRAIN"), &target).unwrap();
    let test = load_csv(env_path("TLM_REPRO_TEST"), &target).unwrap();

    let mut cfg = RunConfig {
        target_column: target,
        ..RunConfig::default()
    };
    cfg.tree.mixup.enabled = true;
    let plain = train_on(&train, Some(&test), &cfg).unwrap();
    cfg.feature_opt = true;
    let optimized = train_on(&train, Some(&test), &cfg).unwrap();

    let plain_test = plain.report.test.as_ref().unwrap();
    let optimized_test = optimized.report.test.as_ref().unwrap();
    let rows = [
        ("hard routing", plain_test["hard"].mae, 4.09),
        ("soft routing", plain_test["soft"].mae, 4.02),
        ("feature optimization", optimized_test["hard"].mae, 3.97),
    ];
    let mut misses = Vec::new();
    for (name, got, reference) in rows {
        let pass = (got - reference).abs() <= TOLERANCE;
        println!(
            "{} {name}: MAE {got:.3} (reference {reference}, +-{TOLERANCE})",
            if pass { "PASS" } else { "FAIL" }
        );
        if !pass {
            misses.push(name);
        }
    }
    assert!(misses.is_empty(), "outside tolerance: {misses:?}");
}
