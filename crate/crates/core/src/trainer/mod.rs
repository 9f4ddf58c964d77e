//! Training loop, run bookkeeping, the two-phase likelihood pipeline and
//! evaluation.

mod config;
mod evaluate;
mod manifest;
mod pipeline;
mod run;

pub use config::{Architecture, LrDecay, TrainConfig, Variant};
pub use evaluate::{evaluate, generate, EvalConfig, MetricsReport, PsnrSummary};
pub use manifest::{resolve, CheckpointEntry, DatasetInfo, EvaluationArtifacts, LikelihoodArtifacts, RunManifest, RunStatus, MANIFEST_FILE};
pub use pipeline::{pipeline_runs, run_mleq_pipeline, PipelineManifest, PIPELINE_FILE};
pub use run::{read_epoch_rows, read_loss_rows, train, LossRow, TrainOptions};

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::datasets::Samples;
use crate::equalizer::{rank_samples, sampling_distribution, Sampler, SamplerMode, ScoreTable};
use crate::error::{Error, Result};
use crate::losses::{adversarial_loss, combine, cycle_loss, norm_loss, row_norms, LossBreakdown};
use crate::metrics::psnr_batch;
use crate::models::{build_triple, Checkpoint, ModelTriple};
use crate::nn::{Adam, Mode, Module, Param, Tensor};
use crate::norm_controller::ControllerState;
use crate::stats;

/// Batch size used for no-gradient passes over whole splits.
pub const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UpdateKind {
    D,
    GE,
}

/// Loss record of one joint generator/encoder update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Global batch counter (1-based) at which the update happened.
    pub step: u64,
    pub epoch: u64,
    pub losses: LossBreakdown,
}

/// Per-epoch summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u64,
    pub lr: f64,
    pub batches: u64,
    pub d_steps: u64,
    pub ge_steps: u64,
    pub l_adv_d: f64,
    pub l_adv_ge: f64,
    pub l_cyc: f64,
    pub l_norm: f64,
    pub lambda_norm: f64,
    pub norm_mean: f64,
    pub norm_var: f64,
}

/// Trainer state beyond networks, optimizers and RNG; stored in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    pub config: TrainConfig,
    pub global_batch: u64,
    pub table: Option<ScoreTable>,
    pub controller: Option<ControllerState>,
    pub dataset_fingerprint: String,
}

pub type TrainCheckpoint = Checkpoint<TrainerState>;

/// Owns all mutable training state.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub triple: ModelTriple,
    d_opt: Adam,
    ge_opt: Adam,
    rng: ChaCha8Rng,
    epoch: u64,
    pub state: TrainerState,
    static_sampler: Option<Sampler>,
    /// When set, every update is appended here.
    pub update_log: Option<Vec<UpdateKind>>,
}

fn ge_params(triple: &ModelTriple) -> Vec<&Param> {
    let mut p = triple.generator.params();
    p.extend(triple.encoder.params());
    p
}

/// Standard normal latent batch.
pub fn sample_latents<R: rand::Rng>(n: usize, dim: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn((n, dim), || StandardNormal.sample(rng))
}

/// Encoded norms of every sample, computed in evaluation mode.
pub fn encoded_norms(triple: &ModelTriple, samples: &Samples) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(samples.len());
    let mut start = 0;
    while start < samples.len() {
        let end = (start + EVAL_CHUNK).min(samples.len());
        let z = triple.encoder.infer(&samples.range(start, end), Mode::Eval)?;
        out.extend(row_norms(&z));
        start = end;
    }
    Ok(out)
}

/// Capped reconstruction PSNR of every sample.
pub fn reconstruction_psnr(triple: &ModelTriple, samples: &Samples, mode: Mode) -> Result<Vec<f64>> {
    let m = samples
        .pixel_max()
        .ok_or_else(|| Error::InvalidInput("PSNR needs samples with a pixel range".into()))?;
    let mut out = Vec::with_capacity(samples.len());
    let mut start = 0;
    while start < samples.len() {
        let end = (start + EVAL_CHUNK).min(samples.len());
        let x = samples.range(start, end);
        out.extend(psnr_batch(&x, &triple.reconstruct(&x, mode)?, m)?);
        start = end;
    }
    Ok(out)
}

impl Trainer {
    /// Fresh trainer: networks initialized from `config.init_seed`, training
    /// stream from `config.seed`. Static mode requires a complete score table.
    pub fn new(config: &TrainConfig, data: &Samples, static_scores: Option<ScoreTable>) -> Result<Self> {
        config.validate()?;
        let specs = config.network_specs(data.shape())?;
        let triple = build_triple(&specs, config.init_seed)?;
        let d_opt = Adam::new(config.optimizer, &triple.discriminator.params());
        let ge_opt = Adam::new(config.optimizer, &ge_params(&triple));
        let table = match config.sampler.mode {
            SamplerMode::Uniform => None,
            SamplerMode::StaticLl => {
                let t = static_scores.ok_or_else(|| {
                    Error::config("sampler.mode", "static_ll sampling requires a score table from the likelihood phase")
                })?;
                if t.len() != data.len() {
                    return Err(Error::config(
                        "scores",
                        format!("score table has {} entries but the training set has {}", t.len(), data.len()),
                    ));
                }
                if !t.is_complete() {
                    return Err(Error::config("scores", "static score table has uninitialized entries"));
                }
                Some(t)
            }
            SamplerMode::DynamicPsnr => {
                if data.pixel_max().is_none() {
                    return Err(Error::config("sampler.mode", "dynamic_psnr needs image data with a pixel range"));
                }
                Some(ScoreTable::new(data.len()))
            }
        };
        let controller = if config.variant.uses_controller() {
            Some(ControllerState::new(&config.controller, config.latent_dim)?)
        } else {
            None
        };
        let mut t = Self {
            triple,
            d_opt,
            ge_opt,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            epoch: 0,
            state: TrainerState {
                config: config.clone(),
                global_batch: 0,
                table,
                controller,
                dataset_fingerprint: data.fingerprint(),
            },
            static_sampler: None,
            update_log: None,
        };
        t.prepare_static()?;
        Ok(t)
    }

    fn prepare_static(&mut self) -> Result<()> {
        if self.state.config.sampler.mode == SamplerMode::StaticLl {
            let table = self.state.table.as_ref().expect("static table");
            let ranks = rank_samples(table)?;
            let s = &self.state.config.sampler;
            self.static_sampler = Some(Sampler::new(&sampling_distribution(&ranks, s.lambda_perc, s.lambda_dist)?)?);
        }
        Ok(())
    }

    pub fn from_checkpoint(ckpt: TrainCheckpoint) -> Result<Self> {
        let mut t = Self {
            triple: ckpt.triple,
            d_opt: ckpt.d_optimizer,
            ge_opt: ckpt.ge_optimizer,
            rng: ckpt.rng,
            epoch: ckpt.epoch,
            state: ckpt.extra,
            static_sampler: None,
            update_log: None,
        };
        t.prepare_static()?;
        Ok(t)
    }

    pub fn checkpoint(&self) -> TrainCheckpoint {
        Checkpoint {
            triple: self.triple.clone(),
            d_optimizer: self.d_opt.clone(),
            ge_optimizer: self.ge_opt.clone(),
            epoch: self.epoch,
            rng: self.rng.clone(),
            extra: self.state.clone(),
        }
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn config(&self) -> &TrainConfig {
        &self.state.config
    }

    pub fn lambda_norm(&self) -> f64 {
        self.state.controller.as_ref().map_or(0.0, |c| c.lambda_norm)
    }

    fn batch_sampler(&mut self, n: usize) -> Result<Sampler> {
        let cfg = self.state.config.sampler;
        match cfg.mode {
            SamplerMode::Uniform => Sampler::uniform(n),
            SamplerMode::StaticLl => Ok(self.static_sampler.clone().expect("prepared")),
            SamplerMode::DynamicPsnr => {
                if self.epoch <= cfg.warmup_epochs {
                    return Sampler::uniform(n);
                }
                let table = self.state.table.as_mut().expect("dynamic table");
                table.fill_uninitialized_with_median();
                if !table.is_complete() {
                    return Sampler::uniform(n);
                }
                let ranks = rank_samples(table)?;
                Sampler::new(&sampling_distribution(&ranks, cfg.lambda_perc, cfg.lambda_dist)?)
            }
        }
    }

    /// One discriminator update; returns the discriminator loss before the update.
    fn d_step(&mut self, x: &Tensor, z: &Array2<f64>, lr: f64) -> Result<f64> {
        let form = self.state.config.adversarial_form;
        let t = &mut self.triple;
        t.discriminator.power_iterate();
        let z_enc = t.encoder.infer(x, Mode::BatchStats)?;
        let x_gen = t.generator.infer(z, Mode::BatchStats)?;
        t.discriminator.zero_grad();
        let (real, cr) = t.discriminator.forward(x, &z_enc, Mode::Train)?;
        let (fake, cf) = t.discriminator.forward(&x_gen, z, Mode::Train)?;
        let adv = adversarial_loss(&real, &fake, form)?;
        if !adv.l_d.is_finite() {
            return Err(Error::non_finite(format!("discriminator loss at batch {}", self.state.global_batch)));
        }
        t.discriminator.backward(&cr, &adv.d_grad_real);
        t.discriminator.backward(&cf, &adv.d_grad_fake);
        self.d_opt.step(t.discriminator.params_mut(), lr);
        t.discriminator.zero_grad();
        if let Some(log) = &mut self.update_log {
            log.push(UpdateKind::D);
        }
        Ok(adv.l_d)
    }

    /// One joint generator + encoder update on `total_ge`.
    fn ge_step(&mut self, x: &Tensor, z: &Array2<f64>, lr: f64, l_d: f64) -> Result<LossBreakdown> {
        let cfg = &self.state.config;
        let (form, lambda_cyc) = (cfg.adversarial_form, cfg.lambda_cyc);
        let lambda_norm = self.lambda_norm();
        let t = &mut self.triple;
        t.generator.zero_grad();
        t.encoder.zero_grad();
        let (z_enc, ce) = t.encoder.forward(x, Mode::Train)?;
        let (x_gen, cg) = t.generator.forward(z, Mode::Train)?;
        let (x_rec, crec) = t.generator.forward(&z_enc, Mode::Train)?;
        let (real, cdr) = t.discriminator.forward(x, &z_enc, Mode::Train)?;
        let (fake, cdf) = t.discriminator.forward(&x_gen, z, Mode::Train)?;
        let adv = adversarial_loss(&real, &fake, form)?;
        let (l_cyc, g_rec) = cycle_loss(x, &x_rec)?;
        let (l_norm, g_norm) = norm_loss(&z_enc)?;
        let losses = combine(l_d, adv.l_ge, l_cyc, l_norm, lambda_cyc, lambda_norm)?;
        if !losses.is_finite() {
            return Err(Error::non_finite(format!("generator/encoder loss at batch {}", self.state.global_batch)));
        }
        let (_, gz_real) = t.discriminator.backward(&cdr, &adv.ge_grad_real);
        let (gx_fake, _) = t.discriminator.backward(&cdf, &adv.ge_grad_fake);
        t.discriminator.zero_grad();
        t.generator.backward(&cg, &gx_fake);
        let gz_rec = t.generator.backward(&crec, &(g_rec * lambda_cyc));
        let g_zenc = gz_real + gz_rec + g_norm * lambda_norm;
        t.encoder.backward(&ce, &g_zenc);
        let mut params = t.generator.params_mut();
        params.extend(t.encoder.params_mut());
        self.ge_opt.step(params, lr);
        t.generator.zero_grad();
        t.encoder.zero_grad();
        if let Some(log) = &mut self.update_log {
            log.push(UpdateKind::GE);
        }
        Ok(losses)
    }

    fn rescore(&mut self, data: &Samples, indices: &[usize], x: &Tensor) -> Result<()> {
        let m = data.pixel_max().expect("checked at construction");
        let rec = self.triple.reconstruct(x, Mode::BatchStats)?;
        let values = psnr_batch(x, &rec, m)?;
        self.state
            .table
            .as_mut()
            .expect("dynamic table")
            .update_scores_dynamic(indices, &values)
    }

    fn full_refresh(&mut self, data: &Samples) -> Result<()> {
        let values = reconstruction_psnr(&self.triple, data, Mode::BatchStats)?;
        let idx: Vec<usize> = (0..data.len()).collect();
        self.state
            .table
            .as_mut()
            .expect("dynamic table")
            .update_scores_dynamic(&idx, &values)
    }

    /// Runs one epoch of `max(1, N / batch_size)` batches. Joint updates are
    /// passed to `on_step` as they happen.
    pub fn run_epoch(&mut self, data: &Samples, on_step: &mut dyn FnMut(&StepRecord)) -> Result<EpochRecord> {
        if data.fingerprint() != self.state.dataset_fingerprint {
            return Err(Error::config("dataset", "training data differs from the data this run was started with"));
        }
        self.epoch += 1;
        let cfg = self.state.config.clone();
        let epoch = self.epoch;
        let lr = cfg.lr_at(epoch);
        let n = data.len();
        let batches = (n / cfg.batch_size).max(1) as u64;
        let dynamic = cfg.sampler.mode == SamplerMode::DynamicPsnr;
        let mut sampler = if dynamic { None } else { Some(self.batch_sampler(n)?) };
        let (mut d_steps, mut ge_steps) = (0u64, 0u64);
        let mut sums = [0.0f64; 4];
        for _ in 0..batches {
            self.state.global_batch += 1;
            if dynamic {
                sampler = Some(self.batch_sampler(n)?);
            }
            let indices = sampler.as_ref().expect("sampler").draw_batch(cfg.batch_size, &mut self.rng);
            let x = data.batch(&indices);
            let z = sample_latents(cfg.batch_size, cfg.latent_dim, &mut self.rng);
            let l_d = self.d_step(&x, &z, lr)?;
            d_steps += 1;
            sums[0] += l_d;
            if self.state.global_batch.is_multiple_of(cfg.d_steps_per_ge_step) {
                let losses = self.ge_step(&x, &z, lr, l_d)?;
                ge_steps += 1;
                sums[1] += losses.l_adv_ge;
                sums[2] += losses.l_cyc;
                sums[3] += losses.l_norm;
                on_step(&StepRecord {
                    step: self.state.global_batch,
                    epoch,
                    losses,
                });
            }
            if dynamic {
                self.rescore(data, &indices, &x)?;
                if cfg.sampler.refresh_period > 0 && self.state.global_batch.is_multiple_of(cfg.sampler.refresh_period) {
                    self.full_refresh(data)?;
                }
            }
        }
        let norms = encoded_norms(&self.triple, data)?;
        let (norm_mean, norm_var) = (stats::mean(&norms), stats::variance(&norms));
        if let Some(c) = &mut self.state.controller {
            let spread = c.spread_of(&norms);
            c.update(epoch, spread)?;
        }
        let per = |s: f64, k: u64| if k == 0 { f64::NAN } else { s / k as f64 };
        let record = EpochRecord {
            epoch,
            lr,
            batches,
            d_steps,
            ge_steps,
            l_adv_d: per(sums[0], d_steps),
            l_adv_ge: per(sums[1], ge_steps),
            l_cyc: per(sums[2], ge_steps),
            l_norm: per(sums[3], ge_steps),
            lambda_norm: self.lambda_norm(),
            norm_mean,
            norm_var,
        };
        log::info!(
            "epoch {epoch}: lr {lr:.3e} l_d {:.4} l_ge {:.4} l_cyc {:.4} l_norm {:.4} lambda_norm {:.4} |E(x)| {:.3}",
            record.l_adv_d,
            record.l_adv_ge,
            record.l_cyc,
            record.l_norm,
            record.lambda_norm,
            norm_mean
        );
        Ok(record)
    }
}
