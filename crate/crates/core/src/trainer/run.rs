use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::manifest::{resolve, CheckpointEntry, DatasetInfo, RunManifest, RunStatus, MANIFEST_FILE};
use super::{EpochRecord, StepRecord, TrainCheckpoint, TrainConfig, Trainer};
use crate::datasets::{DataSource, DatasetSplit};
use crate::equalizer::{SamplerMode, ScoreTable};
use crate::error::{Error, Result};
use crate::norm_controller::write_empty_history;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    /// Required for static likelihood sampling.
    pub static_scores: Option<ScoreTable>,
    /// Recorded in the manifest so later commands can reload the data.
    pub data_source: Option<DataSource>,
    /// Stop after this epoch; the run stays resumable.
    pub stop_after: Option<u64>,
    /// Continue from the latest checkpoint of an existing run in the output directory.
    pub resume: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            static_scores: None,
            data_source: None,
            stop_after: None,
            resume: true,
        }
    }
}

/// One row of the per-update loss log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub step: u64,
    pub epoch: u64,
    pub l_adv_d: f64,
    pub l_adv_ge: f64,
    pub l_cyc: f64,
    pub l_norm: f64,
    pub lambda_cyc: f64,
    pub lambda_norm: f64,
    pub total_ge: f64,
    pub total_d: f64,
}

impl From<&StepRecord> for LossRow {
    fn from(r: &StepRecord) -> Self {
        let l = &r.losses;
        Self {
            step: r.step,
            epoch: r.epoch,
            l_adv_d: l.l_adv_d,
            l_adv_ge: l.l_adv_ge,
            l_cyc: l.l_cyc,
            l_norm: l.l_norm,
            lambda_cyc: l.lambda_cyc,
            lambda_norm: l.lambda_norm,
            total_ge: l.total_ge,
            total_d: l.total_d,
        }
    }
}

pub fn read_loss_rows(path: &Path) -> Result<Vec<LossRow>> {
    read_rows(path)
}

pub fn read_epoch_rows(path: &Path) -> Result<Vec<EpochRecord>> {
    read_rows(path)
}

fn read_rows<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    if !path.exists() {
        return Err(Error::MissingFile { path: path.to_path_buf() });
    }
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

fn rewrite_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

fn append_row<T: Serialize>(path: &Path, row: &T) -> Result<()> {
    let fresh = !path.exists() || fs::metadata(path)?.len() == 0;
    let file = OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    w.serialize(row)?;
    w.flush()?;
    Ok(())
}

fn checkpoint_name(epoch: u64) -> PathBuf {
    PathBuf::from("checkpoints").join(format!("epoch_{epoch:05}.ckpt"))
}

fn snapshot_name(epoch: u64) -> PathBuf {
    PathBuf::from("scores").join(format!("epoch_{epoch:05}.csv"))
}

fn dataset_info(data: &DatasetSplit) -> DatasetInfo {
    DatasetInfo {
        name: data.name.clone(),
        fingerprint: data.train.fingerprint(),
        n_train: data.train.len(),
        image_shape: data.image_shape,
        pixel_max: data.pixel_max,
    }
}

fn fresh_manifest(config: &TrainConfig, data: &DatasetSplit, opts: &TrainOptions) -> RunManifest {
    RunManifest {
        status: RunStatus::Running,
        config: config.clone(),
        dataset: dataset_info(data),
        data_source: opts.data_source.clone(),
        epochs_completed: 0,
        losses_csv: "losses.csv".into(),
        epochs_csv: "epochs.csv".into(),
        controller_csv: "controller.csv".into(),
        checkpoints: Vec::new(),
        static_scores: (config.sampler.mode == SamplerMode::StaticLl).then(|| "scores_static.csv".into()),
        score_snapshots: Vec::new(),
        likelihood: None,
        evaluations: Vec::new(),
        error: None,
    }
}

/// Loads the latest checkpoint of an interrupted run and drops log rows
/// written after it.
fn resume_from(manifest: &mut RunManifest, out: &Path) -> Result<Option<Trainer>> {
    let Some(entry) = manifest.latest_checkpoint().cloned() else {
        return Ok(None);
    };
    let ckpt = TrainCheckpoint::load(&resolve(out, &entry.path))?;
    let e = ckpt.epoch;
    let losses = resolve(out, &manifest.losses_csv);
    if losses.exists() {
        let rows: Vec<LossRow> = read_loss_rows(&losses)?.into_iter().filter(|r| r.epoch <= e).collect();
        rewrite_rows(&losses, &rows)?;
    }
    let epochs = resolve(out, &manifest.epochs_csv);
    if epochs.exists() {
        let rows: Vec<EpochRecord> = read_epoch_rows(&epochs)?.into_iter().filter(|r| r.epoch <= e).collect();
        rewrite_rows(&epochs, &rows)?;
    }
    manifest.epochs_completed = e;
    manifest.status = RunStatus::Running;
    manifest.error = None;
    log::info!("resuming {} from epoch {e}", out.display());
    Ok(Some(Trainer::from_checkpoint(ckpt)?))
}

fn clear_logs(manifest: &RunManifest, out: &Path) -> Result<()> {
    for p in [&manifest.losses_csv, &manifest.epochs_csv] {
        let p = resolve(out, p);
        if p.exists() {
            fs::remove_file(p)?;
        }
    }
    Ok(())
}

/// Trains one model and writes its artifacts under `out`. An unfinished run
/// with the same configuration in `out` is continued from its latest checkpoint.
pub fn train(config: &TrainConfig, data: &DatasetSplit, out: &Path, opts: &TrainOptions) -> Result<RunManifest> {
    config.validate()?;
    fs::create_dir_all(out.join("checkpoints"))?;
    let info = dataset_info(data);
    let mut resumed = None;
    let mut manifest = if opts.resume && out.join(MANIFEST_FILE).exists() {
        let (mut m, _) = RunManifest::load(out)?;
        if m.config != *config || m.dataset != info {
            return Err(Error::config(
                "out",
                format!("{} holds a run with a different configuration or dataset", out.display()),
            ));
        }
        if m.status == RunStatus::Completed {
            return Ok(m);
        }
        resumed = resume_from(&mut m, out)?;
        if m.data_source.is_none() {
            m.data_source = opts.data_source.clone();
        }
        m
    } else {
        fresh_manifest(config, data, opts)
    };
    let mut trainer = match resumed {
        Some(t) => t,
        None => {
            clear_logs(&manifest, out)?;
            manifest.checkpoints.clear();
            manifest.score_snapshots.clear();
            manifest.epochs_completed = 0;
            if let (Some(p), Some(t)) = (&manifest.static_scores, &opts.static_scores) {
                t.write_csv(&resolve(out, p))?;
            }
            Trainer::new(config, &data.train, opts.static_scores.clone())?
        }
    };
    manifest.save(out)?;

    let losses_path = resolve(out, &manifest.losses_csv);
    let epochs_path = resolve(out, &manifest.epochs_csv);
    let controller_path = resolve(out, &manifest.controller_csv);
    let last = opts.stop_after.map_or(config.epochs, |s| s.min(config.epochs));
    while trainer.epoch() < last {
        let mut step_err = None;
        let result = trainer.run_epoch(&data.train, &mut |r| {
            if step_err.is_none() {
                step_err = append_row(&losses_path, &LossRow::from(r)).err();
            }
        });
        let record = match result.and_then(|r| step_err.map_or(Ok(r), Err)) {
            Ok(r) => r,
            Err(e) => {
                manifest.status = RunStatus::Failed;
                manifest.error = Some(e.to_string());
                manifest.save(out)?;
                return Err(e);
            }
        };
        append_row(&epochs_path, &record)?;
        match &trainer.state.controller {
            Some(c) => c.write_csv(&controller_path)?,
            None => write_empty_history(&controller_path)?,
        }
        let epoch = record.epoch;
        manifest.epochs_completed = epoch;
        if epoch % config.checkpoint_every == 0 || epoch == config.epochs || epoch == last {
            let rel = checkpoint_name(epoch);
            trainer.checkpoint().save(&out.join(&rel))?;
            manifest.checkpoints.retain(|c| c.epoch != epoch);
            manifest.checkpoints.push(CheckpointEntry { epoch, path: rel });
            if let (SamplerMode::DynamicPsnr, Some(t)) = (config.sampler.mode, &trainer.state.table) {
                let rel = snapshot_name(epoch);
                fs::create_dir_all(out.join("scores"))?;
                t.write_csv(&out.join(&rel))?;
                if !manifest.score_snapshots.contains(&rel) {
                    manifest.score_snapshots.push(rel);
                }
            }
        }
        manifest.save(out)?;
    }
    if trainer.epoch() >= config.epochs {
        manifest.status = RunStatus::Completed;
        manifest.save(out)?;
    }
    Ok(manifest)
}
