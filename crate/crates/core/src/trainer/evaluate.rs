use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::manifest::{resolve, EvaluationArtifacts, RunManifest};
use super::{encoded_norms, reconstruction_psnr, sample_latents, TrainCheckpoint, EVAL_CHUNK};
use crate::datasets::{denormalize, write_dataset, DatasetSplit, Samples, SplitName};
use crate::error::{Error, Result};
use crate::metrics::{fid, precision_recall, Embedder, EmbeddingConfig, EmbeddingSource};
use crate::models::ModelTriple;
use crate::nn::{flatten, Mode};
use crate::norm_controller::sample_prior_norms;
use crate::stats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Number of samples generated from the prior.
    pub n_gen: usize,
    pub split: SplitName,
    pub embedding: EmbeddingConfig,
    pub pr_k: usize,
    pub seed: u64,
    /// Evaluate this epoch's checkpoint instead of the latest.
    pub checkpoint_epoch: Option<u64>,
    /// Images per reconstruction / sample panel.
    pub n_panel: usize,
    /// Prior draws for the reference norm histogram.
    pub n_prior_norms: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_gen: 5000,
            split: SplitName::Test,
            embedding: EmbeddingConfig::default(),
            pr_k: 3,
            seed: 0,
            checkpoint_epoch: None,
            n_panel: 16,
            n_prior_norms: 10000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsnrSummary {
    pub mean: f64,
    pub p10: f64,
    pub p50: f64,
    pub p90: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub variant: String,
    pub tag: String,
    pub dataset: String,
    pub split: SplitName,
    pub checkpoint_epoch: u64,
    pub n_real: usize,
    pub n_gen: usize,
    pub seed: u64,
    pub embedding_source: EmbeddingSource,
    pub embedding_d: usize,
    pub fid: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub pr_k: usize,
    pub psnr: Option<PsnrSummary>,
    pub norm_mean: f64,
    pub norm_var: f64,
    pub prior_norm_mean: f64,
    pub prior_norm_var: f64,
    /// Two-sample KS statistic between encoded and prior norms.
    pub ks_norm_prior: f64,
    /// Set when a set is too small for a full-rank covariance estimate.
    pub rank_deficient: bool,
    pub warnings: Vec<String>,
}

impl MetricsReport {
    /// `(metric, value)` pairs for the flat CSV form.
    pub fn rows(&self) -> Vec<(&'static str, f64)> {
        let opt = |v: Option<f64>| v.unwrap_or(f64::NAN);
        let mut rows = vec![
            ("checkpoint_epoch", self.checkpoint_epoch as f64),
            ("n_real", self.n_real as f64),
            ("n_gen", self.n_gen as f64),
            ("embedding_d", self.embedding_d as f64),
            ("fid", opt(self.fid)),
            ("precision", opt(self.precision)),
            ("recall", opt(self.recall)),
            ("pr_k", self.pr_k as f64),
        ];
        if let Some(p) = self.psnr {
            rows.extend([("psnr_mean", p.mean), ("psnr_p10", p.p10), ("psnr_p50", p.p50), ("psnr_p90", p.p90)]);
        }
        rows.extend([
            ("norm_mean", self.norm_mean),
            ("norm_var", self.norm_var),
            ("prior_norm_mean", self.prior_norm_mean),
            ("prior_norm_var", self.prior_norm_var),
            ("ks_norm_prior", self.ks_norm_prior),
        ]);
        rows
    }
}

/// Generates `n` images from the prior in evaluation mode, flattened.
pub fn generate(triple: &ModelTriple, n: usize, seed: u64) -> Result<Array2<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = sample_latents(n, triple.latent_dim(), &mut rng);
    let mut parts = Vec::new();
    let mut start = 0;
    while start < n {
        let end = (start + EVAL_CHUNK).min(n);
        let zc = z.slice(ndarray::s![start..end, ..]).to_owned();
        parts.push(flatten(&triple.generator.infer(&zc, Mode::Eval)?));
        start = end;
    }
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    Ok(ndarray::concatenate(Axis(0), &views).expect("equal widths"))
}

fn to_samples(rows: &Array2<f64>, shape: (usize, usize, usize), pixel_max: Option<u32>) -> Result<Samples> {
    let raw = rows.iter().map(|&v| denormalize(v, pixel_max) as f32).collect();
    Samples::new(shape, pixel_max, raw)
}

fn write_column(path: &Path, header: &str, values: &[f64], indexed: bool) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    if indexed {
        writeln!(f, "sample_index,{header}")?;
        for (i, v) in values.iter().enumerate() {
            writeln!(f, "{i},{v}")?;
        }
    } else {
        writeln!(f, "{header}")?;
        for v in values {
            writeln!(f, "{v}")?;
        }
    }
    f.flush()?;
    Ok(())
}

/// Evaluates a run's checkpoint against one split of `data` and records the
/// artifacts in the run manifest. Deterministic given `config.seed`.
pub fn evaluate(run_dir: &Path, data: &DatasetSplit, config: &EvalConfig) -> Result<MetricsReport> {
    if config.n_gen == 0 {
        return Err(Error::config("eval.n_gen", "must be at least 1"));
    }
    let (mut manifest, dir) = RunManifest::load(run_dir)?;
    let entry = match config.checkpoint_epoch {
        Some(e) => manifest
            .checkpoint_at(e)
            .ok_or_else(|| Error::config("eval.checkpoint_epoch", format!("run has no checkpoint for epoch {e}")))?,
        None => manifest
            .latest_checkpoint()
            .ok_or_else(|| Error::InvalidInput(format!("{} has no checkpoints", dir.display())))?,
    }
    .clone();
    let ckpt = TrainCheckpoint::load(&resolve(&dir, &entry.path))?;
    let triple = &ckpt.triple;
    if triple.image_shape() != data.image_shape {
        return Err(Error::shape("evaluation data", triple.image_shape(), data.image_shape));
    }
    let real = data.split(config.split);
    let mut warnings = Vec::new();

    let fake = generate(triple, config.n_gen, config.seed)?;
    let embedder = Embedder::fit(&config.embedding, &real.matrix())?;
    let er = embedder.embed(&real.matrix())?;
    let ef = embedder.embed(&fake)?;
    let rank_deficient = er.vectors.nrows() < er.d + 1 || ef.vectors.nrows() < ef.d + 1;
    if rank_deficient {
        warnings.push(format!(
            "embedding covariance is rank deficient: {} real and {} generated points for dimension {}",
            er.vectors.nrows(),
            ef.vectors.nrows(),
            er.d
        ));
    }
    let fid_value = match fid(&er.vectors, &ef.vectors) {
        Ok(v) => Some(v),
        Err(e) => {
            warnings.push(format!("FID skipped: {e}"));
            None
        }
    };
    let pr = match precision_recall(&er.vectors, &ef.vectors, config.pr_k) {
        Ok(p) => Some(p),
        Err(e) => {
            warnings.push(format!("precision/recall skipped: {e}"));
            None
        }
    };

    let psnr_values = match real.pixel_max() {
        Some(_) => Some(reconstruction_psnr(triple, real, Mode::Eval)?),
        None => None,
    };
    let norms = encoded_norms(triple, real)?;
    let prior = sample_prior_norms(triple.latent_dim(), config.n_prior_norms.max(1), config.seed);
    for w in &warnings {
        log::warn!("{w}");
    }
    let report = MetricsReport {
        variant: manifest.config.variant.to_string(),
        tag: manifest.config.tag(),
        dataset: data.name.clone(),
        split: config.split,
        checkpoint_epoch: entry.epoch,
        n_real: real.len(),
        n_gen: config.n_gen,
        seed: config.seed,
        embedding_source: er.source,
        embedding_d: er.d,
        fid: fid_value,
        precision: pr.map(|p| p.precision),
        recall: pr.map(|p| p.recall),
        pr_k: config.pr_k,
        psnr: psnr_values.as_ref().map(|v| PsnrSummary {
            mean: stats::mean(v),
            p10: stats::percentile(v, 10.0),
            p50: stats::percentile(v, 50.0),
            p90: stats::percentile(v, 90.0),
        }),
        norm_mean: stats::mean(&norms),
        norm_var: stats::variance(&norms),
        prior_norm_mean: stats::mean(&prior),
        prior_norm_var: stats::variance(&prior),
        ks_norm_prior: stats::ks_statistic(&norms, &prior),
        rank_deficient,
        warnings,
    };

    let split_name = serde_json::to_value(config.split)?.as_str().unwrap_or("split").to_string();
    let rel: PathBuf = format!("eval_{split_name}_epoch{:05}_seed{}", entry.epoch, config.seed).into();
    let out = dir.join(&rel);
    fs::create_dir_all(&out)?;
    fs::write(out.join("metrics.json"), serde_json::to_string_pretty(&report)?)?;
    let mut w = csv::Writer::from_path(out.join("metrics.csv"))?;
    w.write_record(["metric", "value"])?;
    for (k, v) in report.rows() {
        w.write_record([k.to_string(), v.to_string()])?;
    }
    w.flush()?;
    if let Some(v) = &psnr_values {
        write_column(&out.join("psnr.csv"), "psnr", v, true)?;
    }
    write_column(&out.join("norms.csv"), "norm", &norms, true)?;
    write_column(&out.join("prior_norms.csv"), "norm", &prior, false)?;

    let n_panel = config.n_panel.min(real.len()).min(config.n_gen);
    if n_panel > 0 {
        let originals = real.range(0, n_panel);
        let recon = triple.reconstruct(&originals, Mode::Eval)?;
        let shape = data.image_shape;
        let panel = DatasetSplit {
            name: "panel".into(),
            train: to_samples(&flatten(&originals), shape, real.pixel_max())?,
            validation: to_samples(&flatten(&recon), shape, real.pixel_max())?,
            test: to_samples(&fake.slice(ndarray::s![..n_panel, ..]).to_owned(), shape, real.pixel_max())?,
            image_shape: shape,
            pixel_max: real.pixel_max(),
            train_groups: None,
            linear_gaussian: None,
        };
        write_dataset(&panel, &out.join("panel.eqd"))?;
    }

    let artifacts = EvaluationArtifacts {
        dir: rel.clone(),
        metrics_json: rel.join("metrics.json"),
    };
    manifest.evaluations.retain(|a| a.dir != rel);
    manifest.evaluations.push(artifacts);
    manifest.save(&dir)?;
    Ok(report)
}
