//! Run manifests: what ran, with which settings and inputs, and how it ended.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::settings::Settings;
use crate::Failure;

pub const MANIFEST_FORMAT: &str = "protorel-manifest";
pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    /// Settings key the file was given under.
    pub key: String,
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub role: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    /// `ok` or `error`.
    pub status: String,
    pub exit_code: i32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

impl Outcome {
    pub fn from_result(result: &Result<(), Failure>) -> Self {
        match result {
            Ok(()) => Outcome {
                status: "ok".into(),
                exit_code: 0,
                kind: None,
                message: None,
            },
            Err(f) => Outcome {
                status: "error".into(),
                exit_code: f.exit_code(),
                kind: Some(f.kind().into()),
                message: Some(f.to_string()),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub version: u32,
    pub command: String,
    /// Fully resolved settings, defaults included.
    pub config: Settings,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub inputs: Vec<InputDigest>,
    pub artifacts: Vec<Artifact>,
    /// Start time, seconds since the Unix epoch.
    pub started_at: f64,
    pub wall_clock_seconds: f64,
    pub outcome: Outcome,
}

impl RunManifest {
    pub fn save(&self, path: &Path) -> Result<(), Failure> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text).map_err(|e| Failure::Data(format!("cannot write manifest {}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::Config(format!("cannot read manifest {}: {e}", path.display())))?;
        let manifest: RunManifest = serde_json::from_str(&text)
            .map_err(|e| Failure::Config(format!("manifest {}: {e}", path.display())))?;
        if manifest.format != MANIFEST_FORMAT || manifest.version != MANIFEST_VERSION {
            return Err(Failure::Config(format!(
                "unsupported manifest format {} version {}",
                manifest.format, manifest.version
            )));
        }
        Ok(manifest)
    }

    /// Fails when a recorded input no longer has its recorded content.
    pub fn verify_inputs(&self) -> Result<(), Failure> {
        for input in &self.inputs {
            let now = file_digest(&input.path)?;
            if now != input.sha256 {
                return Err(Failure::Data(format!(
                    "input {} ({}) changed since the recorded run",
                    input.key,
                    input.path.display()
                )));
            }
        }
        Ok(())
    }
}

/// Hex SHA-256 of a file's bytes.
pub fn file_digest(path: &Path) -> Result<String, Failure> {
    let bytes = fs::read(path).map_err(|e| Failure::Data(format!("cannot read {}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}
