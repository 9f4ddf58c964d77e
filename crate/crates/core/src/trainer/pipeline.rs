use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::manifest::{resolve, write_atomic, LikelihoodArtifacts, RunManifest, RunStatus};
use super::run::{train, TrainOptions};
use super::{TrainCheckpoint, TrainConfig, Variant};
use crate::datasets::{DataSource, DatasetSplit};
use crate::equalizer::{SamplerConfig, SamplerMode};
use crate::error::{Error, Result};
use crate::likelihood::{score_training_set, write_histogram_values, AisConfig, ScoreOptions};

pub const PIPELINE_FILE: &str = "pipeline.json";

/// Links the three phases of a likelihood-equalized run. Paths are relative
/// to the pipeline directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineManifest {
    pub status: RunStatus,
    pub completed_phases: u8,
    pub base_config: TrainConfig,
    pub ais: AisConfig,
    /// Run directory of the uniformly sampled model.
    pub phase1: PathBuf,
    pub phase2: Option<LikelihoodArtifacts>,
    /// Run directory of the model retrained with static sampling.
    pub phase3: PathBuf,
    pub error: Option<String>,
}

impl PipelineManifest {
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let path = dir.join(PIPELINE_FILE);
        write_atomic(&path, serde_json::to_string_pretty(self)?.as_bytes())?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = if path.is_dir() { path.join(PIPELINE_FILE) } else { path.to_path_buf() };
        if !file.exists() {
            return Err(Error::MissingFile { path: file });
        }
        Ok(serde_json::from_str(&fs::read_to_string(file)?)?)
    }
}

fn phase_config(base: &TrainConfig, variant: Variant) -> TrainConfig {
    TrainConfig {
        variant,
        sampler: SamplerConfig {
            mode: variant.sampler_mode(),
            ..base.sampler
        },
        ..base.clone()
    }
}

/// Phase 1 trains a uniformly sampled model, phase 2 scores every training
/// sample by its estimated marginal likelihood, and phase 3 trains a new
/// model from freshly initialized parameters with static non-uniform
/// sampling driven by those scores. Rerunning continues unfinished phases.
pub fn run_mleq_pipeline(
    base: &TrainConfig,
    ais: &AisConfig,
    data: &DatasetSplit,
    out: &Path,
    data_source: Option<DataSource>,
    score_options: ScoreOptions,
) -> Result<PipelineManifest> {
    let phase3_cfg = phase_config(base, Variant::PMdganMleq);
    phase3_cfg.validate()?;
    ais.validate()?;
    let mut manifest = PipelineManifest {
        status: RunStatus::Running,
        completed_phases: 0,
        base_config: base.clone(),
        ais: *ais,
        phase1: "phase1".into(),
        phase2: None,
        phase3: "phase3".into(),
        error: None,
    };
    if out.join(PIPELINE_FILE).exists() {
        let old = PipelineManifest::load(out)?;
        if old.base_config != manifest.base_config || old.ais != manifest.ais {
            return Err(Error::config(
                "out",
                format!("{} holds a pipeline with a different configuration", out.display()),
            ));
        }
    }
    manifest.save(out)?;
    match run_phases(&mut manifest, &phase3_cfg, data, out, data_source, score_options) {
        Ok(()) => {
            manifest.status = RunStatus::Completed;
            manifest.save(out)?;
            Ok(manifest)
        }
        Err(e) => {
            manifest.status = RunStatus::Failed;
            manifest.error = Some(e.to_string());
            manifest.save(out)?;
            Err(e)
        }
    }
}

fn run_phases(
    manifest: &mut PipelineManifest,
    phase3_cfg: &TrainConfig,
    data: &DatasetSplit,
    out: &Path,
    data_source: Option<DataSource>,
    score_options: ScoreOptions,
) -> Result<()> {
    let opts = TrainOptions {
        data_source,
        ..Default::default()
    };
    let dir1 = out.join(&manifest.phase1);
    log::info!("phase 1: uniform training in {}", dir1.display());
    let mut m1 = train(&phase_config(&manifest.base_config, Variant::PMdgan), data, &dir1, &opts)?;
    manifest.completed_phases = 1;
    manifest.save(out)?;

    let ckpt_rel = m1
        .latest_checkpoint()
        .ok_or_else(|| Error::InvalidInput("phase 1 produced no checkpoint".into()))?
        .path
        .clone();
    let ckpt = TrainCheckpoint::load(&resolve(&dir1, &ckpt_rel))?;
    let dir2 = out.join("phase2");
    log::info!("phase 2: likelihood scoring in {}", dir2.display());
    let outcome = score_training_set(&data.train, &ckpt.triple, &manifest.ais, &dir2.join("records.csv"), score_options)?;
    let table = outcome
        .table
        .ok_or_else(|| Error::InvalidInput("likelihood scoring stopped before every sample was scored".into()))?;
    table.write_csv(&dir2.join("scores.csv"))?;
    write_histogram_values(&outcome.records, &dir2.join("histogram.csv"))?;
    let artifacts = LikelihoodArtifacts {
        checkpoint: manifest.phase1.join(&ckpt_rel),
        records_csv: "phase2/records.csv".into(),
        scores_csv: "phase2/scores.csv".into(),
        histogram_csv: "phase2/histogram.csv".into(),
        ais: manifest.ais,
        config_hash: manifest.ais.hash(),
    };
    let up = Path::new("..");
    m1.likelihood = Some(LikelihoodArtifacts {
        checkpoint: ckpt_rel,
        records_csv: up.join(&artifacts.records_csv),
        scores_csv: up.join(&artifacts.scores_csv),
        histogram_csv: up.join(&artifacts.histogram_csv),
        ..artifacts.clone()
    });
    m1.save(&dir1)?;
    manifest.phase2 = Some(artifacts);
    manifest.completed_phases = 2;
    manifest.save(out)?;

    let dir3 = out.join(&manifest.phase3);
    log::info!("phase 3: retraining from scratch with static sampling in {}", dir3.display());
    debug_assert_eq!(phase3_cfg.sampler.mode, SamplerMode::StaticLl);
    train(
        phase3_cfg,
        data,
        &dir3,
        &TrainOptions {
            static_scores: Some(table),
            ..opts
        },
    )?;
    manifest.completed_phases = 3;
    Ok(())
}

/// Loads the phase manifests of a pipeline.
pub fn pipeline_runs(dir: &Path) -> Result<(PipelineManifest, RunManifest, Option<RunManifest>)> {
    let p = PipelineManifest::load(dir)?;
    let (m1, _) = RunManifest::load(&dir.join(&p.phase1))?;
    let m3 = RunManifest::load(&dir.join(&p.phase3)).ok().map(|(m, _)| m);
    Ok((p, m1, m3))
}
