#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

pub fn tcf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tcf"))
        .args(args)
        .env("TCF_LOG", "warn")
        .output()
        .expect("spawn tcf")
}

pub fn ok(args: &[&str]) -> String {
    let out = tcf(args);
    assert!(out.status.success(), "tcf {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

pub const SMALL_CONFIG: &str = r#"{
  "model": {"d_r": 8, "d_z": 2, "tau_max": 3, "outcome_hidden": 6},
  "train": {"epochs": 2, "batch_size": 8, "learning_rate": 0.003}
}"#;

pub struct Fixture {
    pub dir: PathBuf,
    pub data: PathBuf,
    pub ckpt: PathBuf,
    pub config: PathBuf,
}

impl Fixture {
    pub fn path(&self, name: &str) -> String {
        self.dir.join(name).display().to_string()
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A small simulated dataset and a checkpoint trained on it, shared by all tests of one binary.
pub fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap().keep();
        let data = dir.join("d.jsonl");
        let ckpt = dir.join("ckpt");
        let config = dir.join("cfg.json");
        std::fs::write(&config, SMALL_CONFIG).unwrap();
        ok(&["simulate", "--model", "tumour", "--patients", "24", "--steps", "10", "--seed", "5", "--out", s(&data)]);
        ok(&["train", "--data", s(&data), "--config", s(&config), "--out", s(&ckpt), "--seed", "1"]);
        Fixture { dir, data, ckpt, config }
    })
}
