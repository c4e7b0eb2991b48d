mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;
use tlm_core::cli::{EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC};
use tlm_core::data::{load_csv, write_csv, Dataset};
use tlm_core::linear::fit_regressor;
use tlm_core::model::TlmModel;
use tlm_core::routing::{predict_hard, RoutingMode};

use common::recovery_spec;

fn tlm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tlm"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = tlm(args);
    assert!(
        out.status.success(),
        "tlm {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

struct Scratch(TempDir);

impl Scratch {
    fn new() -> Self {
        Self(TempDir::new().unwrap())
    }

    fn path(&self, name: &str) -> PathBuf {
        self.0.path().join(name)
    }

    fn arg(&self, name: &str) -> String {
        self.path(name).to_string_lossy().into_owned()
    }

    fn json(&self, name: &str) -> Value {
        serde_json::from_str(&fs::read_to_string(self.path(name)).unwrap()).unwrap()
    }

    /// Writes a random tree-shaped dataset via `generate`.
    fn generate(&self, name: &str, dim: usize, depth: u32, n: usize, noise: f64, seed: u64) -> String {
        let (dim, depth, n, noise, seed) = (
            dim.to_string(),
            depth.to_string(),
            n.to_string(),
            noise.to_string(),
            seed.to_string(),
        );
        ok(&[
            "generate",
            "--dim",
            &dim,
            "--depth",
            &depth,
            "--n",
            &n,
            "--noise",
            &noise,
            "--seed",
            &seed,
            "--out",
            &self.arg(name),
        ]);
        self.arg(name)
    }

    /// Noiseless four-cell data with disjoint per-cell response ranges.
    fn recovery(&self, name: &str, n: usize, seed: u64) -> String {
        let spec = self.path("recovery_spec.json");
        fs::write(&spec, serde_json::to_string(&recovery_spec(0.02)).unwrap()).unwrap();
        let (n, seed) = (n.to_string(), seed.to_string());
        ok(&[
            "generate",
            "--spec",
            spec.to_str().unwrap(),
            "--n",
            &n,
            "--seed",
            &seed,
            "--out",
            &self.arg(name),
        ]);
        self.arg(name)
    }
}

fn train_model(s: &Scratch, data: &str, extra: &[&str]) -> TlmModel {
    let out = s.arg("model.json");
    let mut args = vec!["train", "--data", data, "--out", &out];
    args.extend_from_slice(extra);
    ok(&args);
    TlmModel::load(Path::new(&out)).unwrap()
}

#[test]
fn depth_zero_model_is_linear_regression() {
    let s = Scratch::new();
    let data = s.generate("train.csv", 3, 2, 300, 0.5, 4);
    let model = train_model(&s, &data, &["--max-depth", "0"]);
    let rows = load_csv(&data, "y").unwrap();
    let lr = fit_regressor(&rows, &Default::default()).unwrap();
    assert_eq!(model.tree.leaf_count(), 1);
    for f in rows.rows() {
        assert_eq!(model.predict(f, RoutingMode::Hard, None).unwrap().0, lr.eval(f));
        assert_eq!(
            model.predict(f, RoutingMode::Hard, None).unwrap(),
            model.predict(f, "soft".parse().unwrap(), None).unwrap()
        );
    }
}

#[test]
fn evaluate_recovers_the_generating_tessellation() {
    let s = Scratch::new();
    let train = s.recovery("train.csv", 2000, 1);
    let test = s.recovery("test.csv", 500, 2);
    train_model(&s, &train, &["--max-depth", "2", "--n-thresholds", "4000"]);
    for mode in ["oracle", "hard"] {
        ok(&[
            "evaluate",
            "--model",
            &s.arg("model.json"),
            "--data",
            &test,
            "--mode",
            mode,
            "--metrics",
            &s.arg("metrics.json"),
            "--predictions",
            &s.arg("pred.csv"),
        ]);
        let metrics = s.json("metrics.json");
        assert_eq!(metrics["mode"], mode);
        assert!(metrics["metrics"]["mae"].as_f64().unwrap() < 1e-3, "{mode}: {metrics}");
        let per_leaf = metrics["per_leaf"].as_object().unwrap();
        assert_eq!(per_leaf.len(), 4);
        let counted: u64 = per_leaf.values().map(|m| m["count"].as_u64().unwrap()).sum();
        assert_eq!(counted, 500);
    }
    let preds = fs::read_to_string(s.path("pred.csv")).unwrap();
    let mut lines = preds.lines();
    assert_eq!(lines.next(), Some("row_id,y_true,y_pred,leaf_id"));
    assert_eq!(lines.count(), 500);
}

#[test]
fn zero_epochs_keeps_the_network_near_identity() {
    let s = Scratch::new();
    let data = s.generate("train.csv", 3, 2, 300, 0.2, 9);
    let model = train_model(
        &s,
        &data,
        &[
            "--max-depth",
            "2",
            "--feature-opt",
            "--epochs",
            "0",
            "--loss-curve",
            &s.arg("curve.csv"),
        ],
    );
    let net = model.feature_net.as_ref().expect("network saved");
    let rows = load_csv(&data, "y").unwrap();
    for f in rows.rows() {
        let moved = net.transform(f).unwrap();
        assert!(moved.iter().zip(f).all(|(a, b)| (a - b).abs() < 1e-3));
    }
    let curve = fs::read_to_string(s.path("curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 2, "header plus the initial loss");
    assert!(curve.starts_with("epoch,loss"));
}

#[test]
fn training_report_is_consistent() {
    let s = Scratch::new();
    let data = s.generate("train.csv", 2, 2, 400, 0.3, 5);
    let test = s.generate("test.csv", 2, 2, 200, 0.3, 6);
    ok(&[
        "train",
        "--data",
        &data,
        "--test",
        &test,
        "--max-depth",
        "3",
        "--out",
        &s.arg("m.json"),
        "--report",
        &s.arg("report.json"),
    ]);
    let report = s.json("report.json");
    assert_eq!(report["rows"], 400);
    let sse: Vec<f64> = report["sse_by_depth"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert!(sse.windows(2).all(|w| w[1] <= w[0]));
    for split in ["training", "test"] {
        for mode in ["hard", "soft", "oracle"] {
            let m = &report[split][mode];
            assert!(
                m["rmse"].as_f64().unwrap() >= m["mae"].as_f64().unwrap(),
                "{split}/{mode}"
            );
        }
    }
    assert!(report["wall_time_seconds"].as_f64().unwrap() >= 0.0);
}

#[test]
fn inspect_reports_every_node() {
    let s = Scratch::new();
    let data = s.generate("train.csv", 2, 2, 500, 0.3, 11);
    let test = s.generate("test.csv", 2, 2, 200, 0.3, 12);
    let model = train_model(&s, &data, &["--max-depth", "3"]);
    let out = ok(&[
        "inspect",
        "--model",
        &s.arg("model.json"),
        "--test",
        &test,
        "--json",
        &s.arg("nodes.json"),
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), model.tree.nodes().len());
    assert!(text.lines().next().unwrap().starts_with("node 0 depth 0"));

    let nodes = s.json("nodes.json");
    let nodes = nodes.as_array().unwrap();
    let mut leaf_total = 0;
    for node in nodes {
        if let Some(t) = node["threshold"].as_f64() {
            assert!(node["y_min"].as_f64().unwrap() < t && t < node["y_max"].as_f64().unwrap());
        }
        if node["leaf"].as_bool().unwrap() {
            leaf_total += node["train_count"].as_u64().unwrap();
        }
    }
    assert_eq!(leaf_total, 500);
    assert_eq!(nodes[0]["test_count"], 200);
}

#[test]
fn tessellation_grid_shows_straight_cell_boundaries() {
    let s = Scratch::new();
    let data = s.generate("train.csv", 2, 1, 400, 0.1, 21);
    let model = train_model(&s, &data, &["--max-depth", "2"]);
    ok(&[
        "tessellate",
        "--model",
        &s.arg("model.json"),
        "--depths",
        "0,1",
        "--resolution",
        "40",
        "--x-range",
        "-1,1",
        "--y-range",
        "-1,1",
        "--out",
        &s.arg("grid.csv"),
    ]);
    let mut reader = csv::Reader::from_path(s.path("grid.csv")).unwrap();
    assert_eq!(
        reader.headers().unwrap().iter().collect::<Vec<_>>(),
        ["depth", "x1", "x2", "leaf_id", "prediction"]
    );
    let root = model.tree.root.split.as_ref().expect("depth-1 split");
    let mut ids = [Vec::new(), Vec::new()];
    for record in reader.records() {
        let r = record.unwrap();
        let depth: usize = r[0].parse().unwrap();
        let f = [r[1].parse::<f64>().unwrap(), r[2].parse().unwrap()];
        let leaf: u64 = r[3].parse().unwrap();
        let value: f64 = r[4].parse().unwrap();
        let expected = predict_hard(&model.tree.truncate(depth), &f).unwrap();
        assert_eq!((value, leaf), expected);
        if depth == 1 {
            // Both cells lie on either side of the root hyperplane.
            assert_eq!(leaf == 1, root.classifier.goes_left(&f));
        }
        ids[depth].push(leaf);
    }
    assert_eq!(ids[0].len(), 1600);
    assert!(ids[0].iter().all(|&id| id == 0));
    let mut distinct = ids[1].clone();
    distinct.sort_unstable();
    distinct.dedup();
    assert_eq!(distinct, [1, 2]);
}

#[test]
fn baselines_table_has_the_reference_rows() {
    let s = Scratch::new();
    let data = s.recovery("train.csv", 600, 3);
    ok(&[
        "baselines",
        "--data",
        &data,
        "--max-depth",
        "2",
        "--n-thresholds",
        "600",
        "--k",
        "4",
        "--mlp-hidden",
        "16",
        "--epochs",
        "5",
        "--out",
        &s.arg("table.json"),
    ]);
    let table = s.json("table.json");
    let rows = table["rows"].as_array().unwrap();
    let names: Vec<&str> = rows.iter().map(|r| r["model"].as_str().unwrap()).collect();
    assert_eq!(
        names,
        [
            "common_sense",
            "linear_regression",
            "kmeans_lr",
            "mlp",
            "tlm_hard",
            "tlm_soft",
            "tlm_oracle"
        ]
    );
    let mae = |name: &str| {
        rows.iter().find(|r| r["model"] == name).unwrap()["train"]["mae"]
            .as_f64()
            .unwrap()
    };

    let train = load_csv(&data, "y").unwrap();
    let mean = train.mean_target();
    let expected = train.targets().iter().map(|y| (y - mean).abs()).sum::<f64>() / train.len() as f64;
    assert!((mae("common_sense") - expected).abs() < 1e-12);
    assert!(mae("tlm_hard") <= mae("linear_regression"));
    assert!(mae("tlm_oracle") <= mae("tlm_hard"));
    assert!(mae("linear_regression") <= mae("common_sense"));
}

#[test]
fn training_is_reproducible_from_a_config_file() {
    let s = Scratch::new();
    let data = s.generate("train.csv", 2, 2, 300, 0.3, 31);
    let config = s.path("run.toml");
    fs::write(
        &config,
        format!(
            "data = {data:?}\nfeature_opt = true\n\n[tree]\nmax_depth = 2\n\n[tree.mixup]\nenabled = true\n\n[train]\nepochs = 3\nseed = 9\n"
        ),
    )
    .unwrap();
    for name in ["a.json", "b.json"] {
        ok(&["train", "--config", config.to_str().unwrap(), "--out", &s.arg(name)]);
    }
    assert_eq!(fs::read(s.path("a.json")).unwrap(), fs::read(s.path("b.json")).unwrap());
    let model = TlmModel::load(&s.path("a.json")).unwrap();
    assert!(model.training.tree.mixup.enabled);
    assert_eq!(model.training.feature_opt.as_ref().map(|t| t.epochs), Some(3));
}

#[test]
fn exit_codes_follow_the_failure_class() {
    let s = Scratch::new();
    let data = s.generate("train.csv", 2, 1, 100, 0.1, 41);
    let out = s.arg("m.json");
    let train = |extra: &[&str]| {
        let mut args = vec!["train", "--out", &out];
        args.extend_from_slice(extra);
        tlm(&args).status.code()
    };

    assert_eq!(tlm(&["train", "--no-such-flag"]).status.code(), Some(EXIT_CONFIG));
    assert_eq!(train(&["--data", &data, "--routing", "sideways"]), Some(EXIT_CONFIG));
    fs::write(s.path("bad.toml"), "surprise = 1\n").unwrap();
    assert_eq!(train(&["--config", &s.arg("bad.toml")]), Some(EXIT_CONFIG));
    assert_eq!(train(&["--data", &data]), Some(0));
    assert_eq!(train(&["--data", &s.arg("missing.csv")]), Some(EXIT_DATA));
    fs::write(s.path("broken.csv"), "a,target\n1,2\nx,3\n").unwrap();
    assert_eq!(train(&["--data", &s.arg("broken.csv")]), Some(EXIT_DATA));

    // Two identical columns leave the unregularized normal equations singular.
    let rows = load_csv(&data, "y").unwrap();
    let twin: Vec<Vec<f64>> = rows.rows().map(|f| vec![f[0], f[0]]).collect();
    write_csv(
        s.path("twin.csv"),
        &Dataset::from_rows(&twin, rows.targets().to_vec()).unwrap(),
        "y",
    )
    .unwrap();
    assert_eq!(
        train(&["--data", &s.arg("twin.csv"), "--ridge-lambda", "0"]),
        Some(EXIT_NUMERIC)
    );
}
