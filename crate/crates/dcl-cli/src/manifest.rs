//! Run manifest: config echo, artifact hashes, timing, outcome.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, ExperimentKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    /// File name relative to the output directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RunStatus {
    Ok,
    Failed,
}

/// Evidence written when a built-in check fails; the run still produces its
/// artifacts so the failure can be inspected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub check: String,
    pub message: String,
    pub evidence: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub experiment: ExperimentKind,
    pub version: String,
    pub status: RunStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<FailureRecord>,
    /// Headline numbers of the run (e.g. the gradcheck max relative error).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<serde_json::Value>,
    pub config: ExperimentConfig,
    pub artifacts: Vec<ArtifactEntry>,
    pub duration_seconds: f64,
}

impl ExperimentManifest {
    pub fn artifact(&self, name: &str) -> Option<&ArtifactEntry> {
        self.artifacts.iter().find(|a| a.path == name)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Write `contents` under `dir` and record its hash.
pub fn write_artifact(
    dir: &Path,
    name: &str,
    contents: &[u8],
    artifacts: &mut Vec<ArtifactEntry>,
) -> std::io::Result<PathBuf> {
    let path = dir.join(name);
    std::fs::write(&path, contents)?;
    artifacts.push(ArtifactEntry {
        path: name.to_string(),
        sha256: sha256_hex(contents),
        bytes: contents.len() as u64,
    });
    Ok(path)
}
