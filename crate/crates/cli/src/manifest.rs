//! `manifest.json`: config hash, tool version, per-stage verdicts and the
//! checksum of every file in the run directory.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST: &str = "manifest.json";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Pass,
    Fail,
    Skip,
}

impl Verdict {
    pub fn from_bool(ok: bool) -> Self {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::Skip => "SKIP",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub verdict: Verdict,
    pub files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub tool_version: String,
    pub stages: BTreeMap<String, StageRecord>,
    /// File name to SHA-256.
    pub files: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl RunManifest {
    pub fn new(config_hash: String) -> Self {
        Self {
            config_hash,
            tool_version: TOOL_VERSION.into(),
            stages: BTreeMap::new(),
            files: BTreeMap::new(),
        }
    }

    /// `Ok(None)` when there is no manifest yet; corrupt manifests are config errors.
    pub fn load(dir: &Path) -> Result<Option<Self>, CliError> {
        let path = dir.join(MANIFEST);
        if !path.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&path)?;
        serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| CliError::Config(format!("corrupt manifest {}: {e}", path.display())))
    }

    pub fn save(&self, dir: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes") + "\n";
        std::fs::write(dir.join(MANIFEST), text)?;
        Ok(())
    }

    /// Hashes `files` (relative to `dir`) and records them under `stage`.
    pub fn record(
        &mut self,
        dir: &Path,
        stage: &str,
        verdict: Verdict,
        files: &[String],
    ) -> Result<(), CliError> {
        for f in files {
            let bytes = std::fs::read(dir.join(f))?;
            self.files.insert(f.clone(), sha256_hex(&bytes));
        }
        self.stages.insert(
            stage.into(),
            StageRecord {
                verdict,
                files: files.to_vec(),
            },
        );
        Ok(())
    }

    /// Adds a file that belongs to no stage (the config copy).
    pub fn record_file(&mut self, dir: &Path, file: &str) -> Result<(), CliError> {
        let bytes = std::fs::read(dir.join(file))?;
        self.files.insert(file.into(), sha256_hex(&bytes));
        Ok(())
    }

    pub fn verdict(&self, stage: &str) -> Option<Verdict> {
        self.stages.get(stage).map(|s| s.verdict)
    }
}
