//! Annealed importance sampling estimates of log p(x) under an isotropic
//! Gaussian observation model `p(x | z) = N(x; G(z), σ²I)`, `z ~ N(0, I)`.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datasets::{hex, LinearGaussianParams, Samples};
use crate::equalizer::ScoreTable;
use crate::error::{Error, Result};
use crate::metrics::psnr_capped;
use crate::models::{Generator, ModelTriple};
use crate::nn::{flatten, Mode};
use crate::stats::log_mean_exp;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TempSchedule {
    Linear,
    #[default]
    Sigmoidal,
}

/// Random-walk Metropolis settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransitionConfig {
    /// Initial proposal standard deviation.
    pub step_size: f64,
    pub n_steps_per_temp: usize,
    pub target_accept: f64,
}

impl Default for TransitionConfig {
    fn default() -> Self {
        Self {
            step_size: 0.1,
            n_steps_per_temp: 1,
            target_accept: 0.6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AisConfig {
    /// Observation noise in model units.
    pub sigma: f64,
    /// Number of inverse temperatures including β = 0 and β = 1.
    pub n_temps: usize,
    pub temp_schedule: TempSchedule,
    pub n_chains: usize,
    pub transition: TransitionConfig,
    pub seed: u64,
}

impl Default for AisConfig {
    fn default() -> Self {
        Self {
            sigma: 0.05,
            n_temps: 1000,
            temp_schedule: TempSchedule::Sigmoidal,
            n_chains: 16,
            transition: TransitionConfig::default(),
            seed: 0,
        }
    }
}

impl AisConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::config("ais.sigma", format!("must be positive, got {}", self.sigma)));
        }
        if self.n_temps < 2 {
            return Err(Error::config("ais.n_temps", "must be at least 2"));
        }
        if self.n_chains == 0 {
            return Err(Error::config("ais.n_chains", "must be at least 1"));
        }
        if !(self.transition.step_size > 0.0) {
            return Err(Error::config("ais.transition.step_size", "must be positive"));
        }
        if !(0.0 < self.transition.target_accept && self.transition.target_accept < 1.0) {
            return Err(Error::config("ais.transition.target_accept", "must lie in (0, 1)"));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex(&Sha256::digest(json.as_bytes()))
    }
}

/// Inverse temperatures `β_0 = 0 < … < β_{T-1} = 1`.
pub fn temperatures(n_temps: usize, schedule: TempSchedule) -> Vec<f64> {
    assert!(n_temps >= 2);
    let last = (n_temps - 1) as f64;
    match schedule {
        TempSchedule::Linear => (0..n_temps).map(|t| t as f64 / last).collect(),
        TempSchedule::Sigmoidal => {
            let delta = 4.0;
            let s = |t: usize| 1.0 / (1.0 + (-delta * (2.0 * t as f64 / last - 1.0)).exp());
            let (lo, hi) = (s(0), s(n_temps - 1));
            let mut b: Vec<f64> = (0..n_temps).map(|t| (s(t) - lo) / (hi - lo)).collect();
            b[0] = 0.0;
            b[n_temps - 1] = 1.0;
            b
        }
    }
}

/// A map from latent batches (rows) to flattened data batches.
pub trait Decoder: Sync {
    fn latent_dim(&self) -> usize;
    fn decode(&self, z: &Array2<f64>) -> Result<Array2<f64>>;
}

impl Decoder for Generator {
    fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    fn decode(&self, z: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(flatten(&self.infer(z, Mode::Eval)?))
    }
}

impl Decoder for LinearGaussianParams {
    fn latent_dim(&self) -> usize {
        self.a.ncols()
    }

    fn decode(&self, z: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(z.dot(&self.a.t()) + &self.b)
    }
}

/// `log N(x; g, σ²I) = −(d/2)·log(2πσ²) − ‖x − g‖²/(2σ²)`.
pub fn log_obs_density(x: ArrayView1<f64>, g: ArrayView1<f64>, sigma: f64) -> f64 {
    let d = x.len() as f64;
    let sq: f64 = x.iter().zip(g).map(|(a, b)| (a - b) * (a - b)).sum();
    -0.5 * d * (2.0 * std::f64::consts::PI * sigma * sigma).ln() - sq / (2.0 * sigma * sigma)
}

fn log_likelihoods<D: Decoder + ?Sized>(decoder: &D, z: &Array2<f64>, x: &Array1<f64>, sigma: f64) -> Result<Array1<f64>> {
    let g = decoder.decode(z)?;
    if g.ncols() != x.len() {
        return Err(Error::shape("decoded sample", x.len(), g.ncols()));
    }
    Ok(g.rows().into_iter().map(|row| log_obs_density(x.view(), row, sigma)).collect())
}

fn log_prior(z: ArrayView1<f64>) -> f64 {
    -0.5 * z.dot(&z)
}

/// One marginal-likelihood estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodRecord {
    pub sample_index: usize,
    pub log10_marginal: f64,
    pub std_error: f64,
    pub config_hash: String,
}

/// Final AIS log-weights (natural log) of every chain.
pub fn ais_log_weights<D: Decoder + ?Sized>(x: &Array1<f64>, decoder: &D, config: &AisConfig, stream: u64) -> Result<Vec<f64>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(stream);
    let k = decoder.latent_dim();
    let c = config.n_chains;
    let betas = temperatures(config.n_temps, config.temp_schedule);
    let mut z: Array2<f64> = Array2::from_shape_simple_fn((c, k), || StandardNormal.sample(&mut rng));
    let mut ll = log_likelihoods(decoder, &z, x, config.sigma)?;
    let mut logw = Array1::<f64>::zeros(c);
    let mut step = config.transition.step_size;
    let last = betas.len() - 1;
    for t in 1..=last {
        let beta = betas[t];
        logw.scaled_add(beta - betas[t - 1], &ll);
        if logw.iter().any(|v| !v.is_finite()) {
            return Err(Error::non_finite(format!("AIS log-weight at temperature index {t}")));
        }
        if t == last {
            break;
        }
        for _ in 0..config.transition.n_steps_per_temp {
            let noise: Array2<f64> = Array2::from_shape_simple_fn((c, k), || StandardNormal.sample(&mut rng));
            let proposal = &z + &(noise * step);
            let ll_prop = log_likelihoods(decoder, &proposal, x, config.sigma)?;
            let mut accepted = 0usize;
            for i in 0..c {
                let log_ratio =
                    log_prior(proposal.row(i)) - log_prior(z.row(i)) + beta * (ll_prop[i] - ll[i]);
                let u: f64 = rng.random();
                if u.ln() < log_ratio {
                    z.row_mut(i).assign(&proposal.row(i));
                    ll[i] = ll_prop[i];
                    accepted += 1;
                }
            }
            let rate = accepted as f64 / c as f64;
            step *= (rate - config.transition.target_accept).exp();
        }
    }
    Ok(logw.to_vec())
}

/// Log-mean-exp of the chain weights with a delta-method standard error,
/// both in natural-log units.
pub fn combine_chains(logw: &[f64]) -> (f64, f64) {
    let est = log_mean_exp(logw);
    let n = logw.len() as f64;
    if logw.len() < 2 {
        return (est, 0.0);
    }
    let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logw.iter().map(|l| (l - max).exp()).collect();
    let mean = w.iter().sum::<f64>() / n;
    let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (est, var.sqrt() / (mean * n.sqrt()))
}

/// AIS estimate of log₁₀ p(x). `stream` selects an independent random stream
/// (the sample index when scoring a dataset).
pub fn ais_marginal<D: Decoder + ?Sized>(x: &Array1<f64>, decoder: &D, config: &AisConfig, stream: u64) -> Result<LikelihoodRecord> {
    let logw = ais_log_weights(x, decoder, config, stream)?;
    let (est, se) = combine_chains(&logw);
    let ln10 = std::f64::consts::LN_10;
    Ok(LikelihoodRecord {
        sample_index: stream as usize,
        log10_marginal: est / ln10,
        std_error: se / ln10,
        config_hash: config.hash(),
    })
}

/// Per-sample scoring output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub record: LikelihoodRecord,
    /// Reconstruction PSNR (capped) when the samples have a pixel range.
    pub psnr: Option<f64>,
}

/// Scores samples `start..end`: reconstructs each with `G(E(x))` and runs AIS on the reconstruction.
pub fn score_range(samples: &Samples, triple: &ModelTriple, config: &AisConfig, start: usize, end: usize) -> Result<Vec<ScoredSample>> {
    if samples.shape() != triple.image_shape() {
        return Err(Error::config(
            "checkpoint",
            format!(
                "model expects samples of shape {:?} but the dataset has {:?}",
                triple.image_shape(),
                samples.shape()
            ),
        ));
    }
    config.validate()?;
    let x = samples.range(start, end);
    let rec = triple.reconstruct(&x, Mode::Eval)?;
    let xf = flatten(&x);
    let rf = flatten(&rec);
    (0..end - start)
        .into_par_iter()
        .map(|j| {
            let target = rf.row(j).to_owned();
            let record = ais_marginal(&target, &triple.generator, config, (start + j) as u64)?;
            let psnr = match samples.pixel_max() {
                Some(m) => Some(psnr_capped(xf.row(j), rf.row(j), m)?),
                None => None,
            };
            Ok(ScoredSample { record, psnr })
        })
        .collect()
}

const RECORD_HEADER: [&str; 5] = ["sample_index", "log10_marginal", "std_error", "psnr", "config_hash"];

/// Reads a (possibly partial) records file.
pub fn read_records(path: &Path) -> Result<Vec<ScoredSample>> {
    if !path.exists() {
        return Err(Error::MissingFile { path: path.to_path_buf() });
    }
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = || Error::format("likelihood records", format!("row {row} is malformed"));
        let get = |k: usize| rec.get(k).ok_or_else(bad);
        let psnr = get(3)?;
        out.push(ScoredSample {
            record: LikelihoodRecord {
                sample_index: get(0)?.parse().map_err(|_| bad())?,
                log10_marginal: get(1)?.parse().map_err(|_| bad())?,
                std_error: get(2)?.parse().map_err(|_| bad())?,
                config_hash: get(4)?.to_string(),
            },
            psnr: if psnr.is_empty() {
                None
            } else {
                Some(psnr.parse().map_err(|_| bad())?)
            },
        });
    }
    Ok(out)
}

fn append_records(path: &Path, rows: &[ScoredSample], header: bool) -> Result<()> {
    let file = fs::OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    if header {
        w.write_record(RECORD_HEADER)?;
    }
    for s in rows {
        let r = &s.record;
        w.write_record([
            r.sample_index.to_string(),
            r.log10_marginal.to_string(),
            r.std_error.to_string(),
            s.psnr.map(|p| p.to_string()).unwrap_or_default(),
            r.config_hash.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Options for [`score_training_set`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScoreOptions {
    pub chunk_size: usize,
    /// Stop after this many chunks (the run can be resumed later).
    pub max_chunks: Option<usize>,
    /// Score only the first `limit` samples.
    pub limit: Option<usize>,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        Self {
            chunk_size: 256,
            max_chunks: None,
            limit: None,
        }
    }
}

/// Result of a (possibly partial) scoring run.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoringOutcome {
    pub records: Vec<ScoredSample>,
    /// Present once every sample is scored.
    pub table: Option<ScoreTable>,
}

/// Scores every sample of `samples`, appending records to `records_path`
/// chunk by chunk. An existing records file produced with the same AIS
/// configuration is resumed; per-sample random streams make the result
/// identical to an uninterrupted run.
pub fn score_training_set(
    samples: &Samples,
    triple: &ModelTriple,
    config: &AisConfig,
    records_path: &Path,
    options: ScoreOptions,
) -> Result<ScoringOutcome> {
    config.validate()?;
    if options.chunk_size == 0 {
        return Err(Error::config("chunk_size", "must be at least 1"));
    }
    let n = options.limit.map_or(samples.len(), |l| l.min(samples.len()));
    let hash = config.hash();
    let mut records = if records_path.exists() {
        read_records(records_path)?
    } else {
        Vec::new()
    };
    for (i, s) in records.iter().enumerate() {
        if s.record.sample_index != i {
            return Err(Error::format("likelihood records", format!("row {i} holds sample {}", s.record.sample_index)));
        }
        if s.record.config_hash != hash {
            return Err(Error::config(
                "ais",
                format!("{} was produced with a different AIS configuration", records_path.display()),
            ));
        }
    }
    if records.len() > n {
        return Err(Error::format("likelihood records", "more rows than samples"));
    }
    if let Some(dir) = records_path.parent() {
        fs::create_dir_all(dir)?;
    }
    let sidecar = records_path.with_extension("ais.json");
    fs::write(
        &sidecar,
        serde_json::to_string_pretty(&serde_json::json!({ "config": config, "config_hash": hash }))?,
    )?;
    let mut header = records.is_empty();
    if header && records_path.exists() {
        fs::remove_file(records_path)?;
    }
    let mut chunks = 0;
    while records.len() < n {
        if options.max_chunks.is_some_and(|m| chunks >= m) {
            break;
        }
        let start = records.len();
        let end = (start + options.chunk_size).min(n);
        let rows = score_range(samples, triple, config, start, end)?;
        append_records(records_path, &rows, header)?;
        header = false;
        records.extend(rows);
        chunks += 1;
        log::info!("scored {}/{} samples", records.len(), n);
    }
    let table = if records.len() == n {
        Some(ScoreTable::from_scores(records.iter().map(|r| r.record.log10_marginal).collect())?)
    } else {
        None
    };
    Ok(ScoringOutcome { records, table })
}

/// Writes the values of a finished scoring run for histogramming.
pub fn write_histogram_values(records: &[ScoredSample], path: &Path) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "log10_marginal")?;
    for r in records {
        writeln!(f, "{}", r.record.log10_marginal)?;
    }
    Ok(())
}
