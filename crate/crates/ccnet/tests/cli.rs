//! End-to-end tests of the `ccnet` binary: subcommands, file formats, and
//! exit codes.

use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const EXIT_USAGE: i32 = 2;
const EXIT_CONFIG: i32 = 3;
const EXIT_VALIDATION: i32 = 4;
const EXIT_DIVERGENCE: i32 = 5;
const EXIT_IO: i32 = 6;

fn ccnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ccnet"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

const SMALL_TRAIN: &str = r#"{
    "p": 4, "q": 3, "k": 2, "m": 3,
    "epochs": 6, "n_samples": 250, "seed": 17
}"#;

#[test]
fn params_reports_exact_and_nominal_counts() {
    let out = ccnet(&["params", "--p", "8", "--q", "8", "--k", "3"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let json: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(json["nodes_per_unit"], 15);
    assert_eq!(json["paper_nominal_nodes_per_unit"], 16);
    assert_eq!(json["total_table_entries"], 8 * 8 * 15);
    assert_eq!(json["paper_nominal_entries"], 8 * 8 * 16);
    let gain = json["capacity_ratio_gain"].as_f64().unwrap();
    assert!((gain - 8.0 / 3.0).abs() < 1e-12);
}

#[test]
fn params_capacity_guard_is_a_validation_failure() {
    let out = ccnet(&["params", "--p", "8", "--q", "8", "--k", "30"]);
    assert_eq!(out.status.code(), Some(EXIT_VALIDATION));
    assert!(stderr(&out).contains("capacity"), "{}", stderr(&out));
}

#[test]
fn bench_emits_measured_cost_csv() {
    let out = ccnet(&["bench", "--p", "8", "--q", "8", "--k-list", "0,3,8"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "k,params_exact,params_nominal,fwd_madds,fwd_adds,ratio_gain"
    );
    let rows: Vec<Vec<String>> = lines
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect();
    assert_eq!(rows.len(), 3);
    // measured adds for p=8, q=8, k=3 is 192; madds stay 64 across k.
    assert_eq!(rows[1][3], "64");
    assert_eq!(rows[1][4], "192");
    assert_eq!(rows[0][3], "64");
    assert_eq!(rows[2][3], "64");
}

#[test]
fn train_writes_metrics_and_model_deterministically() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.json", SMALL_TRAIN);
    let m1 = dir.path().join("m1.csv");
    let m2 = dir.path().join("m2.csv");
    let model1 = dir.path().join("model1.json");
    let model2 = dir.path().join("model2.json");

    for (metrics, model) in [(&m1, &model1), (&m2, &model2)] {
        let out = ccnet(&[
            "train",
            "--config",
            &cfg,
            "--out",
            metrics.to_str().unwrap(),
            "--model-out",
            model.to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    }
    let csv1 = std::fs::read(&m1).unwrap();
    let csv2 = std::fs::read(&m2).unwrap();
    assert_eq!(csv1, csv2, "same seed must give byte-identical CSVs");
    assert_eq!(
        std::fs::read(&model1).unwrap(),
        std::fs::read(&model2).unwrap()
    );

    let text = String::from_utf8(csv1).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "epoch,mse,madds,adds,lookups");
    let last = lines.last().unwrap();
    let fields: Vec<&str> = last.split(',').collect();
    assert_eq!(fields[0], "6");
    let final_mse: f64 = fields[1].parse().unwrap();
    assert!(final_mse < 1e-3, "final mse {final_mse}");

    // The saved model loads and re-saves identically through the library.
    let layer = ccnet::cli::load_model(&model1).unwrap();
    assert_eq!(
        ccnet::cli::model_to_bytes(&layer).unwrap(),
        std::fs::read(&model1).unwrap()
    );
}

#[test]
fn train_seed_override_changes_the_run() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.json", SMALL_TRAIN);
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let out = ccnet(&["train", "--config", &cfg, "--out", a.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let out = ccnet(&[
        "train",
        "--config",
        &cfg,
        "--seed",
        "18",
        "--out",
        b.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn missing_config_is_an_io_error() {
    let out = ccnet(&["train", "--config", "/nonexistent/cfg.json"]);
    assert_eq!(out.status.code(), Some(EXIT_IO));
}

#[test]
fn unknown_config_key_is_rejected_by_name() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.json", r#"{"epsilonn": 0.1}"#);
    let out = ccnet(&["train", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(EXIT_CONFIG));
    assert!(stderr(&out).contains("epsilonn"), "{}", stderr(&out));
}

#[test]
fn cross_field_violation_is_a_validation_failure() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.json", r#"{"k": 30, "m": 30, "p": 32}"#);
    let out = ccnet(&["train", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(EXIT_VALIDATION));
}

#[test]
fn divergence_aborts_with_its_own_exit_code() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"p": 4, "q": 4, "k": 2, "m": 2, "epsilon": 50.0, "epochs": 5, "n_samples": 200}"#,
    );
    let out = ccnet(&["train", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(EXIT_DIVERGENCE));
    assert!(stderr(&out).contains("diverged"), "{}", stderr(&out));
}

#[test]
fn unknown_subcommand_prints_usage() {
    let out = ccnet(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(EXIT_USAGE));
    let err = stderr(&out);
    assert!(err.contains("Usage") || err.contains("usage"), "{err}");
}

#[test]
fn gradcheck_is_deterministic_and_passes() {
    let a = ccnet(&["gradcheck", "--seed", "7", "--configs", "5"]);
    let b = ccnet(&["gradcheck", "--seed", "7", "--configs", "5"]);
    assert_eq!(a.status.code(), Some(0), "{}", stdout(&a));
    assert_eq!(stdout(&a), stdout(&b));
    assert!(stdout(&a).contains("gradcheck: PASS"));
}

#[test]
fn oracle_check_passes() {
    let out = ccnet(&["oracle-check", "--seed", "3"]);
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    assert!(stdout(&out).contains("oracle-check: PASS"));
}

#[test]
fn compare_emits_paired_metrics() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"p": 4, "q": 4, "k": 2, "m": 2, "epochs": 4, "n_samples": 200, "seed": 5}"#,
    );
    let out_path = dir.path().join("paired.csv");
    let out = ccnet(&[
        "compare",
        "--config",
        &cfg,
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = std::fs::read_to_string(&out_path).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "model,epoch,mse,madds,adds,lookups,params"
    );
    let conditional: Vec<&str> = text.lines().filter(|l| l.starts_with("conditional,")).collect();
    let dense: Vec<&str> = text.lines().filter(|l| l.starts_with("dense,")).collect();
    assert_eq!(conditional.len(), 4);
    assert_eq!(dense.len(), 4);
    // parameter factor 2^(k+1)-1 = 7 at k = 2
    let cond_params: u64 = conditional[0].split(',').nth(6).unwrap().parse().unwrap();
    let dense_params: u64 = dense[0].split(',').nth(6).unwrap().parse().unwrap();
    assert_eq!(cond_params, 7 * dense_params);
}

#[test]
fn reinforce_training_runs_end_to_end() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{
            "p": 4, "q": 3, "k": 2, "m": 4,
            "gating": "stochastic", "strategy": "reinforce",
            "epochs": 3, "n_samples": 150, "seed": 23
        }"#,
    );
    let out = ccnet(&["train", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).starts_with("epoch,mse"));
}

#[test]
fn modulated_training_needs_nonneg_inputs() {
    let dir = TempDir::new().unwrap();
    let bad = write_config(
        dir.path(),
        "bad.json",
        r#"{"strategy": "modulated", "epochs": 2, "n_samples": 100}"#,
    );
    let out = ccnet(&["train", "--config", &bad]);
    assert_eq!(out.status.code(), Some(EXIT_VALIDATION));

    let good = write_config(
        dir.path(),
        "good.json",
        r#"{
            "strategy": "modulated", "nonneg_inputs": true, "tau": 0.5,
            "epochs": 2, "n_samples": 100, "epsilon": 0.02
        }"#,
    );
    let out = ccnet(&["train", "--config", &good]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
}

#[test]
fn hand_written_model_loads_and_computes() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("tiny.json");
    std::fs::write(
        &path,
        r#"{
            "format_version": 1,
            "p": 1, "q": 1, "k": 0, "m": 1,
            "gating": {"mode": "deterministic", "tau": 0.0, "eval_policy": "threshold_mean"},
            "selector": "first_k",
            "activation": "identity",
            "bias": [0.0],
            "table": [2.0]
        }"#,
    )
    .unwrap();
    let layer = ccnet::cli::load_model(&path).unwrap();
    let mut meter = ccnet::cost::CostMeter::new();
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    let h = layer
        .forward_eval(
            &[3.0],
            &ccnet::cond_layer::CreditStrategy::DetachedGates,
            &mut rng,
            &mut meter,
        )
        .unwrap();
    assert_eq!(h, vec![6.0]);
}
