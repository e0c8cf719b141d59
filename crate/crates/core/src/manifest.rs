//! Run manifests: resolved config, seeds, timestamps and artifact digests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Running,
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub config: serde_json::Value,
    pub started: String,
    pub finished: Option<String>,
    pub status: RunStatus,
    pub seeds: BTreeMap<String, u64>,
    /// File name (relative to the run directory) → sha256 hex digest.
    pub artifacts: BTreeMap<String, String>,
    pub notes: Vec<String>,
    #[serde(skip)]
    dir: PathBuf,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

impl RunManifest {
    /// Creates the run directory and writes a manifest with status `running`.
    pub fn begin<C: Serialize>(dir: &Path, command: &str, config: &C, seeds: BTreeMap<String, u64>) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let m = RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config: serde_json::to_value(config)?,
            started: now(),
            finished: None,
            status: RunStatus::Running,
            seeds,
            artifacts: BTreeMap::new(),
            notes: Vec::new(),
            dir: dir.to_path_buf(),
        };
        m.write()?;
        Ok(m)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn note(&mut self, text: impl Into<String>) {
        self.notes.push(text.into());
    }

    /// Records (or re-records) the digest of a file inside the run directory.
    pub fn record(&mut self, name: &str) -> Result<()> {
        let digest = sha256_file(&self.dir.join(name))?;
        self.artifacts.insert(name.to_string(), digest);
        self.write()
    }

    pub fn finish(mut self, status: RunStatus) -> Result<Self> {
        self.status = status;
        self.finished = Some(now());
        self.write()?;
        Ok(self)
    }

    pub fn write(&self) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(self.dir.join(MANIFEST_FILE), text)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(dir.join(MANIFEST_FILE))?;
        let mut m: RunManifest = serde_json::from_str(&text)?;
        m.dir = dir.to_path_buf();
        Ok(m)
    }

    /// Names of artifacts whose on-disk digest no longer matches.
    pub fn stale_artifacts(&self) -> Result<Vec<String>> {
        let mut stale = Vec::new();
        for (name, digest) in &self.artifacts {
            if sha256_file(&self.dir.join(name))? != *digest {
                stale.push(name.clone());
            }
        }
        Ok(stale)
    }
}
