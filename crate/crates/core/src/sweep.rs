//! Hyperparameter grids run as independent, resumable jobs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{preset, RunSpec};
use crate::datasets::DatasetSplit;
use crate::error::{Error, Result};
use crate::likelihood::ScoreOptions;
use crate::trainer::{evaluate, run_mleq_pipeline, train, TrainOptions, Variant};

/// One grid point: `[lambda_cyc, lambda_perc, lambda_dist]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepCell(pub f64, pub f64, pub f64);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    /// Preset every job starts from.
    pub preset: String,
    /// `key=value` overrides applied after the preset.
    #[serde(default)]
    pub overrides: Vec<String>,
    pub variant: Variant,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    pub cells: Vec<SweepCell>,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub job: usize,
    pub name: String,
    pub lambda_cyc: f64,
    pub lambda_perc: f64,
    pub lambda_dist: f64,
    pub seed: u64,
    pub status: String,
    pub fid: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub run_dir: PathBuf,
}

impl SweepGrid {
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile { path: path.to_path_buf() });
        }
        toml::from_str(&fs::read_to_string(path)?).map_err(|e| Error::config("sweep", e.message().to_string()))
    }

    /// The resolved run spec of every job, in grid order (cells outer, seeds inner).
    pub fn jobs(&self, extra_overrides: &[String]) -> Result<Vec<(String, SweepCell, u64, RunSpec)>> {
        if self.cells.is_empty() || self.seeds.is_empty() {
            return Err(Error::config("sweep", "grid needs at least one cell and one seed"));
        }
        let mut base = preset(&self.preset)?;
        for o in self.overrides.iter().chain(extra_overrides) {
            base.apply_override(o)?;
        }
        let mut jobs = Vec::new();
        for &cell in &self.cells {
            for &seed in &self.seeds {
                let mut spec = base.clone();
                let t = &mut spec.train;
                t.variant = self.variant;
                t.sampler.mode = self.variant.sampler_mode();
                t.lambda_cyc = cell.0;
                t.sampler.lambda_perc = cell.1;
                t.sampler.lambda_dist = cell.2;
                t.seed = seed;
                spec.validate()?;
                let name = format!("{}_seed{seed}", spec.train.tag());
                jobs.push((name, cell, seed, spec));
            }
        }
        Ok(jobs)
    }
}

/// Runs every job (or only job `only`) under `out/<job name>`, training,
/// evaluating and collecting metrics into `out/sweep.csv`. Failed jobs are
/// recorded and the sweep continues.
pub fn run_sweep(
    grid: &SweepGrid,
    extra_overrides: &[String],
    out: &Path,
    only: Option<usize>,
    load_data: &mut dyn FnMut(&RunSpec) -> Result<DatasetSplit>,
) -> Result<Vec<SweepRow>> {
    let jobs = grid.jobs(extra_overrides)?;
    if let Some(i) = only {
        if i >= jobs.len() {
            return Err(Error::config("job", format!("grid has {} jobs, got index {i}", jobs.len())));
        }
    }
    fs::create_dir_all(out)?;
    let mut rows = Vec::new();
    for (job, (name, cell, seed, spec)) in jobs.into_iter().enumerate() {
        if only.is_some_and(|i| i != job) {
            continue;
        }
        let dir = out.join(&name);
        log::info!("sweep job {job}: {name}");
        let mut row = SweepRow {
            job,
            name: name.clone(),
            lambda_cyc: cell.0,
            lambda_perc: cell.1,
            lambda_dist: cell.2,
            seed,
            status: "completed".into(),
            fid: None,
            precision: None,
            recall: None,
            run_dir: PathBuf::from(&name),
        };
        match run_job(&spec, &dir, load_data) {
            Ok((fid, p, r, run_dir)) => {
                row.fid = fid;
                row.precision = p;
                row.recall = r;
                row.run_dir = PathBuf::from(&name).join(run_dir);
            }
            Err(e) => {
                log::error!("sweep job {job} failed: {e}");
                row.status = format!("failed: {e}");
            }
        }
        rows.push(row);
    }
    let mut w = csv::Writer::from_path(out.join("sweep.csv"))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(rows)
}

type JobMetrics = (Option<f64>, Option<f64>, Option<f64>, PathBuf);

fn run_job(spec: &RunSpec, dir: &Path, load_data: &mut dyn FnMut(&RunSpec) -> Result<DatasetSplit>) -> Result<JobMetrics> {
    let data = load_data(spec)?;
    let run_dir = if spec.train.variant == Variant::PMdganMleq {
        let opts = ScoreOptions {
            chunk_size: spec.scoring.chunk_size,
            ..Default::default()
        };
        let p = run_mleq_pipeline(&spec.train, &spec.ais, &data, dir, Some(spec.data.clone()), opts)?;
        p.phase3
    } else {
        let opts = TrainOptions {
            data_source: Some(spec.data.clone()),
            ..Default::default()
        };
        train(&spec.train, &data, dir, &opts)?;
        PathBuf::new()
    };
    let report = evaluate(&dir.join(&run_dir), &data, &spec.eval)?;
    Ok((report.fid, report.precision, report.recall, run_dir))
}
