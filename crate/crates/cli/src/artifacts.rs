//! Versioned output directory with a checksummed manifest.
//!
//! Every file a command produces is recorded in `manifest.json` under its
//! path relative to the output directory, with the SHA-256 of its bytes.
//! Artifact files never contain timestamps; those live only in the manifest,
//! so reruns with the same config and seeds produce identical checksums.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct StageRecord {
    pub finished_unix: u64,
    pub config: serde_json::Value,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub notes: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub stages: BTreeMap<String, StageRecord>,
    /// relative path → sha256 hex
    pub artifacts: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes made by one command, committed to the manifest at the end.
pub struct StageWriter {
    root: PathBuf,
    prefix: String,
    written: BTreeMap<String, String>,
}

impl StageWriter {
    /// Claims `<root>/<prefix>`. Fails with `WouldOverwrite` if it already holds
    /// files, unless `overwrite` is set, in which case the old contents are removed.
    pub fn begin(root: &Path, prefix: &str, overwrite: bool) -> Result<Self, CliError> {
        let dir = root.join(prefix);
        let occupied = fs::read_dir(&dir).map(|mut d| d.next().is_some()).unwrap_or(false);
        if occupied {
            if !overwrite {
                return Err(CliError::WouldOverwrite(dir));
            }
            fs::remove_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
            if let Some(mut manifest) = read_manifest(root)? {
                let p = format!("{prefix}/");
                manifest.artifacts.retain(|k, _| !k.starts_with(&p));
                write_manifest(root, &manifest)?;
            }
        }
        fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        Ok(StageWriter { root: root.to_path_buf(), prefix: prefix.to_string(), written: BTreeMap::new() })
    }

    pub fn dir(&self) -> PathBuf {
        self.root.join(&self.prefix)
    }

    pub fn write_bytes(&mut self, rel: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let rel = format!("{}/{rel}", self.prefix);
        let path = self.root.join(&rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.written.insert(rel, sha256_hex(bytes));
        Ok(path)
    }

    pub fn write_json<T: Serialize + ?Sized>(&mut self, rel: &str, value: &T) -> Result<PathBuf, CliError> {
        let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
        text.push('\n');
        self.write_bytes(rel, text.as_bytes())
    }

    /// Replaces this stage's entries in the manifest and records the config snapshot.
    pub fn commit(
        self,
        stage: &str,
        config: &impl Serialize,
        notes: BTreeMap<String, serde_json::Value>,
    ) -> Result<(), CliError> {
        let mut manifest = read_manifest(&self.root)?.unwrap_or_default();
        manifest.tool_version = env!("CARGO_PKG_VERSION").to_string();
        let prefix = format!("{}/", self.prefix);
        manifest.artifacts.retain(|k, _| !k.starts_with(&prefix));
        manifest.artifacts.extend(self.written);
        let finished_unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        let config = serde_json::to_value(config).expect("config serializes");
        manifest.stages.insert(stage.to_string(), StageRecord { finished_unix, config, notes });
        write_manifest(&self.root, &manifest)
    }
}

fn write_manifest(root: &Path, manifest: &Manifest) -> Result<(), CliError> {
    let path = root.join(MANIFEST);
    let mut text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(&path, text).map_err(|e| CliError::io(&path, e))
}

pub fn read_manifest(root: &Path) -> Result<Option<Manifest>, CliError> {
    let path = root.join(MANIFEST);
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    serde_json::from_str(&text).map(Some).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Reads an artifact, checking it against the manifest when it is listed there.
pub fn read_artifact(root: &Path, path: &Path) -> Result<String, CliError> {
    if !path.is_file() {
        return Err(CliError::Config(format!("{} does not exist", path.display())));
    }
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    if let (Ok(rel), Some(manifest)) = (path.strip_prefix(root), read_manifest(root)?) {
        let rel = rel.to_string_lossy().replace('\\', "/");
        if let Some(expected) = manifest.artifacts.get(&rel) {
            if *expected != sha256_hex(&bytes) {
                return Err(CliError::Config(format!("{} does not match its manifest checksum", path.display())));
            }
        }
    }
    String::from_utf8(bytes).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn read_json_artifact<T: DeserializeOwned>(root: &Path, path: &Path) -> Result<T, CliError> {
    let text = read_artifact(root, path)?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn guard_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = StageWriter::begin(dir.path(), "mlp", false).unwrap();
        w.write_json("a.json", &[1, 2]).unwrap();
        w.commit("train-mlp", &"cfg", BTreeMap::new()).unwrap();
        let m = read_manifest(dir.path()).unwrap().unwrap();
        assert_eq!(m.artifacts["mlp/a.json"], sha256_hex(b"[\n  1,\n  2\n]\n"));
        assert!(matches!(StageWriter::begin(dir.path(), "mlp", false), Err(CliError::WouldOverwrite(_))));
        let w = StageWriter::begin(dir.path(), "mlp", true).unwrap();
        assert!(!w.dir().join("a.json").exists());
        assert!(read_manifest(dir.path()).unwrap().unwrap().artifacts.is_empty());
    }

    #[test]
    fn tampered_artifact_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = StageWriter::begin(dir.path(), "x", false).unwrap();
        let p = w.write_json("v.json", &5).unwrap();
        w.commit("s", &(), BTreeMap::new()).unwrap();
        assert_eq!(read_json_artifact::<i32>(dir.path(), &p).unwrap(), 5);
        fs::write(&p, "6\n").unwrap();
        assert!(read_artifact(dir.path(), &p).is_err());
    }
}
