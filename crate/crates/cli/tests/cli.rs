mod common;

use common::{fixture, ok, tcf};
use std::fs;
use tcf_core::data::load_dataset;
use tcf_core::pipeline::ExperimentConfig;
use tcf_core::sim::{load_sidecars, SimModel};

#[test]
fn simulate_writes_dataset_and_sidecars() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d.jsonl");
    ok(&[
        "simulate", "--model", "tumour", "--patients", "100", "--steps", "30", "--gamma-c", "5", "--gamma-r", "5", "--seed", "7", "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(load_dataset(&out).unwrap().len(), 100);
    let (table, replay) = load_sidecars(&out).unwrap().expect("sidecars");
    assert!(table.len() > 100);
    match replay.simulator {
        SimModel::Tumour(p) => assert_eq!((p.gamma_c, p.gamma_r, p.seed, p.patients), (5.0, 5.0, 7, 100)),
        other => panic!("{other:?}"),
    }
}

#[test]
fn synthetic_rejects_tumour_flags() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s.jsonl");
    let r = tcf(&["simulate", "--model", "synthetic", "--gamma-c", "2", "--out", out.to_str().unwrap()]);
    assert!(!r.status.success());
}

#[test]
fn train_then_evaluate_reports_requested_horizon() {
    let f = fixture();
    let out = f.path("eval3");
    let table = ok(&["evaluate", "--ckpt", f.ckpt.to_str().unwrap(), "--data", f.data.to_str().unwrap(), "--tau", "3", "--out", &out]);
    assert!(table.contains("Tr Acc."));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(format!("{out}/metrics.json")).unwrap()).unwrap();
    assert_eq!(report["tau"], 3);
    assert_eq!(report["schema_version"], 1);
    assert_eq!(report["factual"]["per_horizon"].as_array().unwrap().len(), 3);
    let t = &report["treatment"];
    assert!(t["trt_acc"].as_f64().unwrap() <= t["tr_acc"].as_f64().unwrap());
    let effects = fs::read_to_string(format!("{out}/effects.jsonl")).unwrap();
    assert_eq!(effects.lines().count(), report["cases"].as_u64().unwrap() as usize);
    let log = fs::read_to_string(f.ckpt.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
}

#[test]
fn evaluate_without_sidecars_is_factual_only() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let bare = dir.path().join("bare.jsonl");
    fs::copy(&f.data, &bare).unwrap();
    let out = ok(&["evaluate", "--ckpt", f.ckpt.to_str().unwrap(), "--data", bare.to_str().unwrap(), "--tau", "2"]);
    let report: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert!(report["counterfactual"].is_null());
    assert!(report["treatment"].is_null());
}

#[test]
fn forecast_over_horizon_fails_clearly() {
    let f = fixture();
    let r = tcf(&["forecast", "--ckpt", f.ckpt.to_str().unwrap(), "--data", f.data.to_str().unwrap(), "--entity", "patient-00001", "--tau", "4"]);
    assert!(!r.status.success());
    let err = String::from_utf8_lossy(&r.stderr);
    assert!(err.contains("tau_max 3"), "{err}");
}

#[test]
fn forecast_prints_requested_horizon() {
    let f = fixture();
    let out = ok(&[
        "forecast", "--ckpt", f.ckpt.to_str().unwrap(), "--data", f.data.to_str().unwrap(), "--entity", "patient-00002", "--tau", "3", "--plan",
        r#"[{"offset": 2, "a": [1, 0]}]"#,
    ]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["horizon"], 3);
    assert_eq!(v["forecast"].as_array().unwrap().len(), 3);
    assert_eq!(v["plan"][1]["a"], serde_json::json!([1, 0]));
}

#[test]
fn recommend_ranks_default_candidates() {
    let f = fixture();
    let out = ok(&["recommend", "--ckpt", f.ckpt.to_str().unwrap(), "--data", f.data.to_str().unwrap(), "--entity", "patient-00003", "--tau", "2"]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    let ranked = v["ranked"].as_array().unwrap();
    assert_eq!(ranked.len(), 1 + 3 * 2);
    assert_eq!(ranked[0]["rank"], 1);
}

#[test]
fn bad_flags_print_usage() {
    let r = tcf(&["train", "--bogus"]);
    assert!(!r.status.success());
    assert!(String::from_utf8_lossy(&r.stderr).contains("Usage"));
    let r = tcf(&["forecast", "--ckpt", "x"]);
    assert!(!r.status.success());
}

#[test]
fn emitted_default_config_round_trips() {
    let out = ok(&["train", "--emit-default-config"]);
    let cfg: ExperimentConfig = serde_json::from_str(&out).unwrap();
    assert_eq!(cfg, ExperimentConfig::default());
}

#[test]
fn mismatched_checkpoint_version_refused() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    for name in ["manifest.json", "params.bin", "norm.json"] {
        fs::copy(f.ckpt.join(name), dir.path().join(name)).unwrap();
    }
    let p = dir.path().join("manifest.json");
    let mut m: serde_json::Value = serde_json::from_str(&fs::read_to_string(&p).unwrap()).unwrap();
    m["format_version"] = 99.into();
    fs::write(&p, m.to_string()).unwrap();
    let r = tcf(&["forecast", "--ckpt", dir.path().to_str().unwrap(), "--data", f.data.to_str().unwrap(), "--entity", "patient-00001"]);
    assert!(!r.status.success());
    assert!(String::from_utf8_lossy(&r.stderr).contains("version 99"));
}

#[test]
fn malformed_config_reports_field_path() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"train": {"epochs": "many"}}"#).unwrap();
    let r = tcf(&["train", "--data", f.data.to_str().unwrap(), "--config", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert!(!r.status.success());
    assert!(String::from_utf8_lossy(&r.stderr).contains("train.epochs"));
}
