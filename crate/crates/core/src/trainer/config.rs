use serde::{Deserialize, Serialize};

use crate::equalizer::{SamplerConfig, SamplerMode};
use crate::error::{Error, Result};
use crate::losses::AdversarialForm;
use crate::models::{Resolution, SpecSet};
use crate::nn::AdamConfig;
use crate::norm_controller::ControllerConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Mdgan,
    PMdgan,
    PMdganMleq,
    EpMdgan,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Mdgan, Variant::PMdgan, Variant::PMdganMleq, Variant::EpMdgan];

    pub fn name(self) -> &'static str {
        match self {
            Self::Mdgan => "mdgan",
            Self::PMdgan => "p_mdgan",
            Self::PMdganMleq => "p_mdgan_mleq",
            Self::EpMdgan => "ep_mdgan",
        }
    }

    pub fn sampler_mode(self) -> SamplerMode {
        match self {
            Self::Mdgan | Self::PMdgan => SamplerMode::Uniform,
            Self::PMdganMleq => SamplerMode::StaticLl,
            Self::EpMdgan => SamplerMode::DynamicPsnr,
        }
    }

    /// Whether λ_norm is tuned by the controller (otherwise it is pinned to 0).
    pub fn uses_controller(self) -> bool {
        self != Self::Mdgan
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    /// Convolutional networks sized by the image resolution (28, 32 or 64).
    Standard,
    /// Fully connected networks with two hidden layers.
    Toy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LrDecay {
    pub factor: f64,
    /// Last epoch trained at the base rate.
    pub start_epoch: u64,
}

impl Default for LrDecay {
    fn default() -> Self {
        Self {
            factor: 0.99,
            start_epoch: 400,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub variant: Variant,
    pub lambda_cyc: f64,
    pub adversarial_form: AdversarialForm,
    pub sampler: SamplerConfig,
    pub controller: ControllerConfig,
    pub epochs: u64,
    pub batch_size: usize,
    pub latent_dim: usize,
    pub optimizer: AdamConfig,
    pub lr_decay: LrDecay,
    pub d_steps_per_ge_step: u64,
    /// Save a checkpoint every this many epochs (the final epoch is always saved).
    pub checkpoint_every: u64,
    pub architecture: Architecture,
    /// Hidden width of the toy networks.
    pub toy_width: usize,
    /// Seed of parameter initialization.
    pub init_seed: u64,
    /// Seed of the training stream (batch draws and latent samples).
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: Variant::PMdgan,
            lambda_cyc: 7.0,
            adversarial_form: AdversarialForm::NonSaturating,
            sampler: SamplerConfig::default(),
            controller: ControllerConfig::default(),
            epochs: 800,
            batch_size: 128,
            latent_dim: 256,
            optimizer: AdamConfig::default(),
            lr_decay: LrDecay::default(),
            d_steps_per_ge_step: 5,
            checkpoint_every: 50,
            architecture: Architecture::Standard,
            toy_width: 64,
            init_seed: 0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// A configuration for `variant` with a consistent sampler mode.
    pub fn for_variant(variant: Variant) -> Self {
        Self {
            variant,
            sampler: SamplerConfig {
                mode: variant.sampler_mode(),
                ..Default::default()
            },
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let expected = self.variant.sampler_mode();
        if self.sampler.mode != expected {
            return Err(Error::config(
                "sampler.mode",
                format!(
                    "variant {} requires sampler mode {:?}, got {:?}",
                    self.variant, expected, self.sampler.mode
                ),
            ));
        }
        self.sampler.validate()?;
        if self.variant.uses_controller() {
            self.controller.validate()?;
        }
        if !(self.lambda_cyc >= 0.0 && self.lambda_cyc.is_finite()) {
            return Err(Error::config("lambda_cyc", format!("must be finite and >= 0, got {}", self.lambda_cyc)));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if self.latent_dim == 0 {
            return Err(Error::config("latent_dim", "must be at least 1"));
        }
        if self.d_steps_per_ge_step == 0 {
            return Err(Error::config("d_steps_per_ge_step", "must be at least 1"));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::config("checkpoint_every", "must be at least 1"));
        }
        if !(self.optimizer.lr > 0.0) {
            return Err(Error::config("optimizer.lr", "must be positive"));
        }
        if !(self.lr_decay.factor > 0.0 && self.lr_decay.factor <= 1.0) {
            return Err(Error::config("lr_decay.factor", "must lie in (0, 1]"));
        }
        if self.architecture == Architecture::Toy && self.toy_width == 0 {
            return Err(Error::config("toy_width", "must be at least 1"));
        }
        Ok(())
    }

    /// Learning rate used during (1-indexed) epoch `epoch`.
    pub fn lr_at(&self, epoch: u64) -> f64 {
        let base = self.optimizer.lr;
        if epoch <= self.lr_decay.start_epoch {
            base
        } else {
            base * self.lr_decay.factor.powi((epoch - self.lr_decay.start_epoch) as i32)
        }
    }

    /// λ_cyc-and-sampler label used in file names and reports.
    pub fn tag(&self) -> String {
        match self.variant.sampler_mode() {
            SamplerMode::Uniform => format!("{}_cyc{}", self.variant, self.lambda_cyc),
            _ => format!(
                "{}_cyc{}_perc{}_dist{}",
                self.variant, self.lambda_cyc, self.sampler.lambda_perc, self.sampler.lambda_dist
            ),
        }
    }

    /// Network specs for data of the given shape.
    pub fn network_specs(&self, image_shape: (usize, usize, usize)) -> Result<SpecSet> {
        match self.architecture {
            Architecture::Toy => Ok(SpecSet::toy(image_shape, self.latent_dim, self.toy_width)),
            Architecture::Standard => {
                let (_, h, w) = image_shape;
                let res = Resolution::for_image_size(h).filter(|_| h == w).ok_or_else(|| {
                    Error::config(
                        "architecture",
                        format!("standard networks need 28x28, 32x32 or 64x64 images, got {h}x{w}; use the toy architecture"),
                    )
                })?;
                Ok(SpecSet::standard(res, image_shape, self.latent_dim))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lr_schedule() {
        let c = TrainConfig::default();
        assert_eq!(c.lr_at(1), 2e-4);
        assert_eq!(c.lr_at(400), 2e-4);
        assert!((c.lr_at(401) - 1.98e-4).abs() < 1e-18);
    }

    #[test]
    fn variant_sampler_consistency() {
        for v in Variant::ALL {
            TrainConfig::for_variant(v).validate().unwrap();
        }
        let mut c = TrainConfig::for_variant(Variant::EpMdgan);
        c.sampler.mode = SamplerMode::Uniform;
        assert!(c.validate().unwrap_err().is_config());
    }
}
