#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("fixtures")
}

pub fn stance(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stance"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("stance binary runs")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// A temp directory holding the fixture config and the three converted splits.
pub struct Workspace {
    pub dir: TempDir,
    pub config: PathBuf,
}

impl Workspace {
    pub fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let config = dir.path().join("toy.toml");
        fs::copy(fixtures().join("toy.toml"), &config).unwrap();
        let ws = Workspace { dir, config };
        for (raw, split) in [("raw", "train"), ("raw", "dev"), ("raw-test", "test")] {
            let out = ws.path(&format!("{split}.jsonl"));
            let o = stance(&["convert", fixtures().join(raw).to_str().unwrap(), out.to_str().unwrap(), "--split", split]);
            assert_eq!(code(&o), 0, "convert {split}: {}", stderr(&o));
        }
        ws
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    /// Runs a config-driven command against this workspace.
    pub fn run(&self, cmd: &str, extra: &[&str]) -> Output {
        let mut args = vec![cmd, "--config", self.config.to_str().unwrap()];
        args.extend_from_slice(extra);
        stance(&args)
    }

    pub fn run_ok(&self, cmd: &str, extra: &[&str]) -> String {
        let o = self.run(cmd, extra);
        assert_eq!(code(&o), 0, "{cmd} {extra:?} failed: {}", stderr(&o));
        stdout(&o)
    }

    /// Artifact checksums recorded in the run manifest, keyed by relative path.
    pub fn artifacts(&self) -> BTreeMap<String, String> {
        let text = fs::read_to_string(self.path("run/manifest.json")).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        serde_json::from_value(v["artifacts"].clone()).unwrap()
    }

    pub fn report_json(&self, rel: &str) -> serde_json::Value {
        serde_json::from_str(&fs::read_to_string(self.path(rel)).unwrap()).unwrap()
    }
}

/// convert, train-mlp, train-ensemble and evaluate on train/dev/test.
pub fn full_pipeline() -> Workspace {
    let ws = Workspace::new();
    ws.run_ok("train-mlp", &[]);
    ws.run_ok("train-ensemble", &[]);
    for split in ["train", "dev", "test"] {
        ws.run_ok("evaluate", &["--split", split]);
    }
    ws
}
