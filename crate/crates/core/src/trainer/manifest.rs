use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::datasets::DataSource;
use crate::error::{Error, Result};
use crate::likelihood::AisConfig;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub name: String,
    /// Fingerprint of the training samples.
    pub fingerprint: String,
    pub n_train: usize,
    pub image_shape: (usize, usize, usize),
    pub pixel_max: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub epoch: u64,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodArtifacts {
    pub checkpoint: PathBuf,
    pub records_csv: PathBuf,
    pub scores_csv: PathBuf,
    pub histogram_csv: PathBuf,
    pub ais: AisConfig,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationArtifacts {
    pub dir: PathBuf,
    pub metrics_json: PathBuf,
}

/// Index of everything a training run produced. Paths are relative to the
/// directory holding the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub status: RunStatus,
    pub config: TrainConfig,
    pub dataset: DatasetInfo,
    pub data_source: Option<DataSource>,
    pub epochs_completed: u64,
    pub losses_csv: PathBuf,
    pub epochs_csv: PathBuf,
    pub controller_csv: PathBuf,
    pub checkpoints: Vec<CheckpointEntry>,
    /// Score table the sampler used (static mode) or snapshots of it (dynamic mode).
    pub static_scores: Option<PathBuf>,
    pub score_snapshots: Vec<PathBuf>,
    pub likelihood: Option<LikelihoodArtifacts>,
    pub evaluations: Vec<EvaluationArtifacts>,
    pub error: Option<String>,
}

impl RunManifest {
    pub fn latest_checkpoint(&self) -> Option<&CheckpointEntry> {
        self.checkpoints.iter().max_by_key(|c| c.epoch)
    }

    pub fn checkpoint_at(&self, epoch: u64) -> Option<&CheckpointEntry> {
        self.checkpoints.iter().find(|c| c.epoch == epoch)
    }

    /// Writes `dir/manifest.json` atomically.
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let path = dir.join(MANIFEST_FILE);
        write_atomic(&path, serde_json::to_string_pretty(self)?.as_bytes())?;
        Ok(path)
    }

    /// Loads a manifest given its file or its run directory.
    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        if !file.exists() {
            return Err(Error::MissingFile { path: file });
        }
        let m = serde_json::from_str(&fs::read_to_string(&file)?)?;
        let dir = file.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((m, dir))
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// `dir.join(rel)` unless `rel` is absolute.
pub fn resolve(dir: &Path, rel: &Path) -> PathBuf {
    if rel.is_absolute() {
        rel.to_path_buf()
    } else {
        dir.join(rel)
    }
}
