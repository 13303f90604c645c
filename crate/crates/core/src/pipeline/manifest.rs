use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Source;
use crate::error::{Error, Result};
use crate::metagame::ConvergenceDecision;
use crate::participant::ModelHyperParams;

pub const MANIFEST_VERSION: u32 = 1;

/// A file inside the run directory and the SHA-256 of its bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRef {
    /// Relative to the run root, `/`-separated.
    pub path: String,
    pub sha256: String,
}

impl ArtifactRef {
    /// Writes `bytes` under `root` and returns the reference.
    pub fn write(root: &Path, rel: &str, bytes: &[u8]) -> Result<Self> {
        let path = root.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        Ok(ArtifactRef {
            path: rel.to_string(),
            sha256: sha256_hex(bytes),
        })
    }

    /// Reads the file and checks it still matches the recorded hash.
    pub fn read(&self, root: &Path) -> Result<Vec<u8>> {
        let path = root.join(&self.path);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let got = sha256_hex(&bytes);
        if got != self.sha256 {
            return Err(Error::Manifest(format!(
                "{} changed on disk: expected sha256 {}, found {got}",
                self.path, self.sha256
            )));
        }
        Ok(bytes)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Acquire,
    Model,
    Optimize,
    Metagame,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Acquire => "acquire",
            Stage::Model => "model",
            Stage::Optimize => "optimize",
            Stage::Metagame => "metagame",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IterationSeeds {
    pub acquire: u64,
    pub model: u64,
    pub optimize: u64,
    pub metagame: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquireRecord {
    pub dataset: ArtifactRef,
    pub groups: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub checkpoint: ArtifactRef,
    pub tuning: ArtifactRef,
    pub hyperparameters: ModelHyperParams,
    /// Dataset ids the model was fitted on.
    pub datasets: Vec<String>,
    pub training_groups: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeRecord {
    pub checkpoint: ArtifactRef,
    pub log: ArtifactRef,
    pub updates: usize,
    pub final_iteration: bool,
    pub snapshots: Vec<ArtifactRef>,
    /// Set when training stopped early on a non-finite gradient.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aborted: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetagameRecord {
    pub matrix: ArtifactRef,
    pub table: ArtifactRef,
    pub decision: ConvergenceDecision,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageFailure {
    pub stage: Stage,
    pub message: String,
}

/// Everything one pass of the outer loop produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Mechanism that played ACQUIRE and seeds OPTIMIZE.
    pub mechanism_in: String,
    pub seeds: IterationSeeds,
    pub acquire: Option<AcquireRecord>,
    pub model: Option<ModelRecord>,
    pub optimize: Option<OptimizeRecord>,
    pub metagame: Option<MetagameRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<StageFailure>,
}

impl IterationRecord {
    /// First stage without a recorded result.
    pub fn next_stage(&self) -> Option<Stage> {
        if self.acquire.is_none() {
            Some(Stage::Acquire)
        } else if self.model.is_none() {
            Some(Stage::Model)
        } else if self.optimize.is_none() {
            Some(Stage::Optimize)
        } else if self.metagame.is_none() {
            Some(Stage::Metagame)
        } else {
            None
        }
    }

    pub fn is_complete(&self) -> bool {
        self.next_stage().is_none()
    }

    fn artifacts(&self) -> Vec<&ArtifactRef> {
        let mut out = Vec::new();
        if let Some(a) = &self.acquire {
            out.push(&a.dataset);
        }
        if let Some(m) = &self.model {
            out.push(&m.checkpoint);
            out.push(&m.tuning);
        }
        if let Some(o) = &self.optimize {
            out.push(&o.checkpoint);
            out.push(&o.log);
            out.extend(&o.snapshots);
        }
        if let Some(m) = &self.metagame {
            out.push(&m.matrix);
            out.push(&m.table);
        }
        out
    }
}

/// State of one run. Records are only ever added or filled in; nothing
/// written is rewritten.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: u32,
    pub seed: u64,
    pub source: Source,
    pub config: ArtifactRef,
    pub initial_mechanism: ArtifactRef,
    pub iterations: Vec<IterationRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub converged_at: Option<usize>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let m: RunManifest = serde_json::from_slice(&bytes)?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::Manifest(format!("unsupported manifest version {}", m.version)));
        }
        Ok(m)
    }

    /// Writes through a temporary file so a crash never leaves a torn
    /// manifest.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn last(&self) -> Option<&IterationRecord> {
        self.iterations.last()
    }

    /// Completed iterations, in order.
    pub fn completed(&self) -> impl Iterator<Item = &IterationRecord> {
        self.iterations.iter().filter(|r| r.is_complete())
    }

    /// Id of the newest trained mechanism, or of θ0.
    pub fn latest_mechanism_id(&self) -> String {
        self.iterations
            .iter()
            .rev()
            .find(|r| r.optimize.is_some())
            .map(|r| mechanism_id(r.iteration))
            .unwrap_or_else(|| mechanism_id(0))
    }

    /// Checks every referenced artifact exists with its recorded hash.
    pub fn verify(&self, root: &Path) -> Result<()> {
        self.config.read(root)?;
        self.initial_mechanism.read(root)?;
        for r in &self.iterations {
            for a in r.artifacts() {
                a.read(root)?;
            }
        }
        Ok(())
    }
}

pub fn mechanism_id(iteration: usize) -> String {
    format!("theta-{iteration:02}")
}

pub fn dataset_id(iteration: usize) -> String {
    format!("D{iteration:02}")
}

/// Iteration index of a `theta-XX` id.
pub fn parse_mechanism_id(id: &str) -> Option<usize> {
    let digits = id.strip_prefix("theta-")?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}
