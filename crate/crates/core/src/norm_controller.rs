//! Automatic tuning of the prior-norm weight λ_norm.

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum Monte Carlo sample count for prior norm statistics.
pub const MIN_PRIOR_SAMPLES: usize = 10_000;

/// Monte Carlo mean and (population) variance of ‖z‖₂ for z ~ N(0, I_D).
pub fn prior_norm_statistics(latent_dim: usize, n_mc: usize, seed: u64) -> Result<(f64, f64)> {
    if latent_dim == 0 {
        return Err(Error::config("latent_dim", "must be positive"));
    }
    if n_mc < MIN_PRIOR_SAMPLES {
        return Err(Error::config(
            "controller.n_mc",
            format!("needs at least {MIN_PRIOR_SAMPLES} samples, got {n_mc}"),
        ));
    }
    let norms = sample_prior_norms(latent_dim, n_mc, seed);
    Ok((crate::stats::mean(&norms), crate::stats::variance(&norms)))
}

/// Norms of `n` independent standard normal vectors of dimension `latent_dim`.
pub fn sample_prior_norms(latent_dim: usize, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            (0..latent_dim)
                .map(|_| {
                    let v: f64 = StandardNormal.sample(&mut rng);
                    v * v
                })
                .sum::<f64>()
                .sqrt()
        })
        .collect()
}

/// Statistic of the encoded norms that the controller compares with the
/// prior's norm variance.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormSpread {
    /// Variance about the sample mean.
    #[default]
    Variance,
    /// Mean squared deviation from the prior's mean norm. Equals the variance
    /// plus the squared mean offset, so a shifted mean also raises λ_norm.
    PriorMeanDeviation,
}

/// Controller settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerConfig {
    pub initial_lambda: f64,
    pub warmup_epochs: u64,
    pub eta: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub n_mc: usize,
    pub mc_seed: u64,
    pub spread: NormSpread,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            initial_lambda: 0.01,
            warmup_epochs: 200,
            eta: 0.1,
            lambda_min: 1e-3,
            lambda_max: 10.0,
            n_mc: 100_000,
            mc_seed: 0,
            spread: NormSpread::Variance,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_min > 0.0 && self.lambda_min <= self.lambda_max && self.lambda_max.is_finite()) {
            return Err(Error::config(
                "controller.lambda_min",
                format!("bounds must satisfy 0 < min <= max, got [{}, {}]", self.lambda_min, self.lambda_max),
            ));
        }
        if !(self.lambda_min..=self.lambda_max).contains(&self.initial_lambda) {
            return Err(Error::config(
                "controller.initial_lambda",
                format!("{} lies outside [{}, {}]", self.initial_lambda, self.lambda_min, self.lambda_max),
            ));
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::config("controller.eta", "must be finite and non-negative"));
        }
        if self.n_mc < MIN_PRIOR_SAMPLES {
            return Err(Error::config("controller.n_mc", format!("must be at least {MIN_PRIOR_SAMPLES}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerRecord {
    pub epoch: u64,
    pub lambda_norm: f64,
    pub empirical_var: f64,
}

/// State of the λ_norm controller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerState {
    pub lambda_norm: f64,
    pub warmup_epochs: u64,
    pub prior_norm_mean: f64,
    pub prior_norm_var: f64,
    pub eta: f64,
    pub bounds: (f64, f64),
    #[serde(default)]
    pub spread: NormSpread,
    pub history: Vec<ControllerRecord>,
}

impl ControllerState {
    /// Builds the controller, estimating the prior norm statistics.
    pub fn new(config: &ControllerConfig, latent_dim: usize) -> Result<Self> {
        config.validate()?;
        let (mean, var) = prior_norm_statistics(latent_dim, config.n_mc, config.mc_seed)?;
        Ok(Self::with_prior(config, mean, var))
    }

    pub fn with_prior(config: &ControllerConfig, prior_norm_mean: f64, prior_norm_var: f64) -> Self {
        Self {
            lambda_norm: config.initial_lambda,
            warmup_epochs: config.warmup_epochs,
            prior_norm_mean,
            prior_norm_var,
            eta: config.eta,
            bounds: (config.lambda_min, config.lambda_max),
            spread: config.spread,
            history: Vec::new(),
        }
    }

    /// The configured spread statistic of a set of encoded norms.
    pub fn spread_of(&self, norms: &[f64]) -> f64 {
        match self.spread {
            NormSpread::Variance => crate::stats::variance(norms),
            NormSpread::PriorMeanDeviation => {
                norms.iter().map(|n| (n - self.prior_norm_mean).powi(2)).sum::<f64>() / norms.len() as f64
            }
        }
    }

    /// Applies one epoch's update. Before `warmup_epochs` the state is untouched;
    /// afterwards λ ← clip(λ·exp(η·(var/prior_var − 1)), min, max).
    pub fn update(&mut self, epoch: u64, empirical_norm_var: f64) -> Result<()> {
        if !(empirical_norm_var >= 0.0) || !empirical_norm_var.is_finite() {
            return Err(Error::InvalidInput(format!(
                "empirical norm variance must be finite and non-negative, got {empirical_norm_var}"
            )));
        }
        if epoch < self.warmup_epochs {
            return Ok(());
        }
        let ratio = empirical_norm_var / self.prior_norm_var;
        let next = self.lambda_norm * (self.eta * (ratio - 1.0)).exp();
        self.lambda_norm = next.clamp(self.bounds.0, self.bounds.1);
        self.history.push(ControllerRecord {
            epoch,
            lambda_norm: self.lambda_norm,
            empirical_var: empirical_norm_var,
        });
        Ok(())
    }

    /// Writes the history as CSV `(epoch, lambda_norm, empirical_var, prior_var)`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["epoch", "lambda_norm", "empirical_var", "prior_var"])?;
        for r in &self.history {
            w.write_record([
                r.epoch.to_string(),
                r.lambda_norm.to_string(),
                r.empirical_var.to_string(),
                self.prior_norm_var.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Writes an empty controller history file (used for variants without a controller).
pub fn write_empty_history(path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "epoch,lambda_norm,empirical_var,prior_var")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state() -> ControllerState {
        ControllerState::with_prior(&ControllerConfig::default(), 15.98, 0.5)
    }

    #[test]
    fn warmup_keeps_initial_lambda() {
        let mut s = state();
        s.update(100, 3.0).unwrap();
        assert_eq!(s.lambda_norm, 0.01);
        assert!(s.history.is_empty());
    }

    #[test]
    fn matching_variance_is_a_fixed_point() {
        let mut s = state();
        s.update(300, 0.5).unwrap();
        assert_eq!(s.lambda_norm, 0.01);
        assert_eq!(s.history.len(), 1);
    }

    #[test]
    fn doubled_variance_scales_by_exp_eta() {
        let mut s = state();
        s.update(300, 1.0).unwrap();
        assert!((s.lambda_norm - 0.01 * 0.1f64.exp()).abs() < 1e-15);
        assert!((s.lambda_norm - 0.011052).abs() < 1e-6);
    }

    #[test]
    fn negative_variance_rejected() {
        assert!(state().update(300, -1.0).is_err());
    }

    #[test]
    fn too_few_samples_rejected() {
        assert!(prior_norm_statistics(4, 100, 0).is_err());
    }

    #[test]
    fn initial_lambda_must_lie_within_bounds() {
        let cfg = ControllerConfig {
            initial_lambda: 20.0,
            ..Default::default()
        };
        assert!(cfg.validate().unwrap_err().is_config());
    }
}
