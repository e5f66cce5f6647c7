//! End-to-end tests of the `pvnet` binary: exit codes, artifacts, stdout formats.

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn pvnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pvnet"))
        .args(args)
        .env_remove("PVNET_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn train_into(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "train",
        "--feature-map",
        "nl6",
        "--seed",
        "42",
        "--target-mse",
        "0.01",
        "--out-dir",
        dir.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    pvnet(&args)
}

#[test]
fn train_writes_three_reproducible_artifacts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let out = train_into(a.path(), &[]);
    assert!(out.status.success(), "{}", stderr(&out));
    train_into(b.path(), &[]);
    for name in ["snapshot.json", "report.json", "trace.csv"] {
        let fa = std::fs::read(a.path().join(name)).unwrap();
        let fb = std::fs::read(b.path().join(name)).unwrap();
        assert!(!fa.is_empty());
        assert_eq!(fa, fb, "{name} differs between identical runs");
    }

    let report: Value =
        serde_json::from_slice(&std::fs::read(a.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["schema"], "pvnet.train-report/v1");
    assert_eq!(report["seed"], 42);
    assert_eq!(report["config"]["feature_map"], "nl6");
    assert_eq!(report["dataset_digest"].as_str().unwrap().len(), 64);
    let epochs = report["training"]["epochs_executed"].as_u64().unwrap();

    let trace = std::fs::read_to_string(a.path().join("trace.csv")).unwrap();
    let mut lines = trace.lines();
    assert!(lines.next().unwrap().starts_with("# seed=42,dataset_digest="));
    assert_eq!(lines.next().unwrap(), "epoch,mse,best_mse");
    assert_eq!(lines.count() as u64, epochs);

    let snap: Value =
        serde_json::from_slice(&std::fs::read(a.path().join("snapshot.json")).unwrap()).unwrap();
    assert_eq!(snap["schema"], "pvnet.snapshot/v1");
    assert_eq!(snap["feature_map"], "nl6");
    assert_eq!(snap["network"]["sizes"]["input"], 9);
    assert_eq!(snap["network"]["input_hidden"].as_array().unwrap().len(), 90);
    assert_eq!(snap["network"]["mode"], "paper-sequential");
}

#[test]
fn keep_constant_restores_four_features() {
    let dir = tempfile::tempdir().unwrap();
    let out = train_into(dir.path(), &["--keep-constant", "--max-epochs", "5"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let snap: Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("snapshot.json")).unwrap()).unwrap();
    assert_eq!(snap["network"]["sizes"]["input"], 14);
    assert_eq!(snap["input_columns"][0], "full_load");
}

#[test]
fn predict_from_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    assert!(train_into(dir.path(), &[]).status.success());
    let snap = dir.path().join("snapshot.json");
    let snap = snap.to_str().unwrap();

    let out = pvnet(&["predict", "--snapshot", snap, "--query", "25,2600"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "biodiesel_pct,speed_rpm,power_kw,torque_nm,sfc");
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[1].split(',').count(), 5);

    let out = pvnet(&["predict", "--snapshot", snap, "--query", "120,2600"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("outside [0, 100]"));

    // Row 16 of the training table: B20 at 2400 rpm.
    let report: Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    let row16 = report["evaluation"]
        .as_array()
        .unwrap()
        .iter()
        .find(|e| e["pattern_index"] == 16)
        .unwrap();
    let out = pvnet(&["predict", "--snapshot", snap, "--query", "20,2400"]);
    let text = stdout(&out);
    let preds: Vec<f64> = text.lines().nth(1).unwrap().split(',').skip(2).map(|v| v.parse().unwrap()).collect();
    for (t, pred) in preds.iter().enumerate() {
        let actual = row16["actual"][t].as_f64().unwrap();
        let residual = row16["residual"][t].as_f64().unwrap();
        assert!((pred - actual).abs() <= residual + 1e-9, "target {t}: {pred} vs {actual} ± {residual}");
    }
    assert_eq!(row16["actual"][0], 16.3);

    let queries = dir.path().join("q.csv");
    std::fs::write(&queries, "biodiesel_pct,speed_rpm\n10,1200\n30,3000\n").unwrap();
    let out = pvnet(&["predict", "--snapshot", snap, "--inputs", queries.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(stdout(&out).lines().count(), 3);
}

#[test]
fn predict_rejects_inconsistent_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    assert!(train_into(dir.path(), &["--max-epochs", "3"]).status.success());
    let path = dir.path().join("snapshot.json");
    let mut snap: Value = serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
    snap["feature_map"] = "nl2".into();
    std::fs::write(&path, serde_json::to_string(&snap).unwrap()).unwrap();
    let out = pvnet(&["predict", "--snapshot", path.to_str().unwrap(), "--query", "10,2000"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("invalid snapshot"), "{}", stderr(&out));
}

#[test]
fn cross_product_maps_need_two_features() {
    let dir = tempfile::tempdir().unwrap();
    let out = pvnet(&[
        "train",
        "--feature-map",
        "NL1",
        "--dataset",
        "bundled-emissions",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("feature map undefined for single-feature input"));
    assert!(!dir.path().join("snapshot.json").exists());
}

#[test]
fn emissions_train_and_predict() {
    let dir = tempfile::tempdir().unwrap();
    let out = pvnet(&[
        "train",
        "--feature-map",
        "nl5",
        "--dataset",
        "bundled-emissions",
        "--targets",
        "hc",
        "--max-epochs",
        "200",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let snap = dir.path().join("snapshot.json");
    let out = pvnet(&["predict", "--snapshot", snap.to_str().unwrap(), "--query", "25"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(stdout(&out).lines().next().unwrap(), "blend_pct,hc");
    let out = pvnet(&["predict", "--snapshot", snap.to_str().unwrap(), "--query", "25,2000"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn require_target_exits_4_but_keeps_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = train_into(dir.path(), &["--max-epochs", "5", "--require-target"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(dir.path().join("report.json").exists());
}

#[test]
fn invalid_flags_exit_2() {
    for args in [
        &["train", "--hidden", "0"][..],
        &["train", "--eta", "-1"],
        &["train", "--max-epochs", "0"],
        &["train", "--feature-map", "all"],
        &["train", "--targets", "co"],
        &["train", "--update-mode", "adam"],
    ] {
        let out = pvnet(args);
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", stderr(&out));
    }
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(
        &cfg,
        r#"{"feature_map": "nl2", "hidden": 4, "max_epochs": 3, "seed": 7}"#,
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = pvnet(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--hidden",
        "6",
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report: Value =
        serde_json::from_slice(&std::fs::read(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["feature_map"], "nl2");
    assert_eq!(report["config"]["hidden"], 6);
    assert_eq!(report["config"]["seed"], 7);
    assert_eq!(report["training"]["epochs_executed"], 3);

    std::fs::write(&cfg, r#"{"hiden": 4}"#).unwrap();
    let out = pvnet(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn out_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_pvnet"))
        .args(["train", "--max-epochs", "2"])
        .env("PVNET_OUT_DIR", dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(dir.path().join("snapshot.json").exists());
}

#[test]
fn dataset_stats_outputs() {
    let out = pvnet(&["dataset-stats"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let v: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["computed"]["max_torque_nm"]["value"], 64.0);
    assert_eq!(v["computed"]["max_torque_nm"]["speed_rpm"], 2400.0);
    assert_eq!(v["computed"]["max_torque_nm"]["row"], 22);
    assert_eq!(v["reported"]["b0_max_torque_nm"], 64.2);
    assert_eq!(v["power_consistency"]["rows"].as_array().unwrap().len(), 36);
    assert_eq!(v["cleaning_log"].as_array().unwrap().len(), 6);

    let raw: Value = serde_json::from_str(&stdout(&pvnet(&["dataset-stats", "--raw"]))).unwrap();
    assert_eq!(raw["cleaning_log"].as_array().unwrap().len(), 0);
    assert_ne!(raw["dataset_digest"], v["dataset_digest"]);

    let out = pvnet(&["dataset-stats", "--dataset", "bundled-emissions"]);
    let v: Value = serde_json::from_str(&stdout(&out)).unwrap();
    let hc: Vec<f64> = v["computed"]["blends"]
        .as_array()
        .unwrap()
        .iter()
        .map(|b| b["hc"].as_f64().unwrap())
        .collect();
    assert_eq!(&hc[..4], &[32.0, 18.0, 16.0, 5.0]);
    assert!(hc[..4].windows(2).all(|w| w[1] <= w[0]));
    assert_eq!(v["computed"]["hc_non_increasing_through_blend"], 30.0);

    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "").unwrap();
    let out = pvnet(&["dataset-stats", "--dataset", empty.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    let header_only = dir.path().join("header.csv");
    std::fs::write(&header_only, "sno,full_load,biodiesel_pct,diesel_pct,speed_rpm,power_kw,torque_nm,sfc\n").unwrap();
    let out = pvnet(&["dataset-stats", "--dataset", header_only.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("empty dataset"));
}

#[test]
fn external_engine_file_with_cleaning() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("engine.csv");
    std::fs::write(
        &path,
        "sno,full_load,biodiesel_pct,diesel_pct,speed_rpm,power_kw,torque_nm,sfc\n\
         1,1,0,100,1200,6.2,48,0.32\n2,1,10,85,1600,9.8,57,0.35\n3,1,10,90,2000,12.0,56,0.33\n",
    )
    .unwrap();
    let out = pvnet(&["dataset-stats", "--dataset", path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let v: Value = serde_json::from_str(&stdout(&out)).unwrap();
    let log = v["cleaning_log"].as_array().unwrap();
    assert_eq!(log.len(), 1);
    assert_eq!(log[0]["row"], 2);
    assert_eq!(log[0]["to"], 90.0);
}

#[test]
fn featurize_prints_values_and_length() {
    let out = pvnet(&["featurize", "--vector", "1,1,1,1", "--feature-map", "NL6"]);
    let text = stdout(&out);
    assert_eq!(text.lines().next().unwrap(), vec!["1"; 14].join(","));
    assert_eq!(text.lines().nth(1).unwrap(), "length=14");

    let out = pvnet(&["featurize", "--vector", "0.5,0.2,0.1,0.4", "--feature-map", "nl1"]);
    assert_eq!(stdout(&out), "0.1,0.05,0.2,0.02,0.08,0.04\nlength=6\n");

    let out = pvnet(&["featurize", "--vector", "0.3", "--feature-map", "nl2"]);
    assert_eq!(stdout(&out).lines().next().unwrap(), "0.09");

    let out = pvnet(&["featurize", "--vector", "0.3,abc", "--feature-map", "nl2"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn compare_on_emissions_uses_single_feature_maps() {
    let dir = tempfile::tempdir().unwrap();
    let out = pvnet(&[
        "compare",
        "--dataset",
        "bundled-emissions",
        "--max-epochs",
        "50",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let v: Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("comparison.json")).unwrap()).unwrap();
    assert_eq!(v["requested_variants"], serde_json::json!(["linear", "nl2", "nl5"]));
    assert_eq!(v["variants"].as_array().unwrap().len(), 3);
    let figure = std::fs::read_to_string(dir.path().join("figure_nl5_co.csv")).unwrap();
    assert_eq!(figure.lines().nth(1).unwrap(), "pattern_index,actual,estimated");
    assert_eq!(figure.lines().count(), 2 + 6);
}

#[test]
fn compare_with_holdout_evaluates_held_out_blend() {
    let dir = tempfile::tempdir().unwrap();
    let out = pvnet(&[
        "compare",
        "--holdout",
        "B20",
        "--max-epochs",
        "20",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let v: Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("comparison.json")).unwrap()).unwrap();
    assert_eq!(v["evaluation_rows"], serde_json::json!([13, 14, 15, 16, 17, 18]));
    assert_eq!(v["variants"].as_array().unwrap().len(), 7);
    let figure = std::fs::read_to_string(dir.path().join("figure_nl3_torque_nm.csv")).unwrap();
    assert_eq!(figure.lines().count(), 2 + 6);
}
