//! Run directories and their manifest.
//!
//! Every artifact is written through [`RunDir`], which records its SHA-256.
//! A finalized directory is immutable.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

use super::config::ExperimentConfig;
use super::table::Table;

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub code_version: String,
    pub config_sha256: String,
    pub finalized: bool,
    pub stages: Vec<String>,
    pub failed_stage: Option<String>,
    pub error: Option<String>,
    pub artifacts: BTreeMap<String, ArtifactEntry>,
    pub notices: Vec<String>,
    pub created_unix: u64,
    pub updated_unix: u64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

impl RunRecord {
    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|_| Error::Missing(path.display().to_string()))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// An open run directory.
#[derive(Debug)]
pub struct RunDir {
    root: PathBuf,
    pub record: RunRecord,
}

impl RunDir {
    /// Opens `root` for `cfg`, creating it if needed. Refuses a finalized
    /// directory and one written under a different configuration.
    pub fn open(root: &Path, cfg: &ExperimentConfig) -> Result<Self> {
        let text = cfg.to_toml()?;
        let digest = sha256_hex(text.as_bytes());
        if root.join(MANIFEST).exists() {
            let record = RunRecord::load(root)?;
            if record.finalized {
                return Err(Error::config(format!(
                    "run directory {} is finalized; choose a new output directory",
                    root.display()
                )));
            }
            if record.config_sha256 != digest {
                return Err(Error::config(format!(
                    "run directory {} was started with a different configuration",
                    root.display()
                )));
            }
            return Ok(Self {
                root: root.to_path_buf(),
                record,
            });
        }
        std::fs::create_dir_all(root)?;
        let t = now();
        let mut dir = Self {
            root: root.to_path_buf(),
            record: RunRecord {
                run_id: digest[..16].to_string(),
                code_version: env!("CARGO_PKG_VERSION").to_string(),
                config_sha256: digest,
                finalized: false,
                stages: Vec::new(),
                failed_stage: None,
                error: None,
                artifacts: BTreeMap::new(),
                notices: Vec::new(),
                created_unix: t,
                updated_unix: t,
            },
        };
        dir.write("config.toml", text.as_bytes())?;
        dir.save()?;
        Ok(dir)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, bytes)?;
        self.record.artifacts.insert(
            rel.to_string(),
            ArtifactEntry {
                sha256: sha256_hex(bytes),
                bytes: bytes.len() as u64,
            },
        );
        Ok(())
    }

    pub fn write_table(&mut self, rel: &str, table: &Table) -> Result<()> {
        self.write(rel, table.to_csv()?.as_bytes())
    }

    pub fn write_jsonl<T: Serialize>(&mut self, rel: &str, records: &[T]) -> Result<()> {
        let mut out = String::new();
        for r in records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        self.write(rel, out.as_bytes())
    }

    /// Records a file produced outside [`RunDir::write`].
    pub fn register(&mut self, rel: &str) -> Result<()> {
        let bytes = std::fs::read(self.root.join(rel))?;
        self.record.artifacts.insert(
            rel.to_string(),
            ArtifactEntry {
                sha256: sha256_hex(&bytes),
                bytes: bytes.len() as u64,
            },
        );
        Ok(())
    }

    pub fn notice(&mut self, msg: impl Into<String>) {
        let msg = msg.into();
        if !self.record.notices.contains(&msg) {
            self.record.notices.push(msg);
        }
    }

    pub fn stage_done(&mut self, stage: &str) -> Result<()> {
        if !self.record.stages.iter().any(|s| s == stage) {
            self.record.stages.push(stage.to_string());
        }
        self.record.failed_stage = None;
        self.record.error = None;
        self.save()
    }

    /// Saves a partial manifest naming the failed stage.
    pub fn stage_failed(&mut self, stage: &str, err: &Error) -> Result<()> {
        self.record.failed_stage = Some(stage.to_string());
        self.record.error = Some(err.to_string());
        self.save()
    }

    pub fn finalize(&mut self) -> Result<()> {
        self.record.finalized = true;
        self.save()
    }

    pub fn save(&mut self) -> Result<()> {
        self.record.updated_unix = now();
        let text = serde_json::to_string_pretty(&self.record)?;
        std::fs::write(self.root.join(MANIFEST), text + "\n")?;
        Ok(())
    }
}

/// Re-hashes every recorded artifact. Returns the paths that are missing or
/// whose digest changed.
pub fn verify_run(root: &Path) -> Result<Vec<String>> {
    let record = RunRecord::load(root)?;
    let mut bad = Vec::new();
    for (rel, entry) in &record.artifacts {
        match std::fs::read(root.join(rel)) {
            Ok(bytes) if sha256_hex(&bytes) == entry.sha256 => {}
            _ => bad.push(rel.clone()),
        }
    }
    Ok(bad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digests_are_recorded_and_verified() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::smoke();
        let mut dir = RunDir::open(tmp.path(), &cfg).unwrap();
        dir.write("metrics/a.csv", b"x,y\n1,2\n").unwrap();
        dir.stage_done("export").unwrap();
        assert!(verify_run(tmp.path()).unwrap().is_empty());
        std::fs::write(tmp.path().join("metrics/a.csv"), b"tampered").unwrap();
        assert_eq!(verify_run(tmp.path()).unwrap(), vec!["metrics/a.csv".to_string()]);
    }

    #[test]
    fn finalized_and_foreign_directories_are_refused() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::smoke();
        RunDir::open(tmp.path(), &cfg).unwrap();
        let mut other = cfg.clone();
        other.replicates = 2;
        assert!(RunDir::open(tmp.path(), &other).unwrap_err().is_config_error());
        let mut dir = RunDir::open(tmp.path(), &cfg).unwrap();
        dir.finalize().unwrap();
        assert!(RunDir::open(tmp.path(), &cfg).unwrap_err().is_config_error());
    }
}
