//! Deterministic synthetic datasets for desk-scale experiments.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{DatasetSplit, Samples};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    /// Quantized 8-bit images drawn around a few cluster centers. A fraction
    /// of samples is drawn with a much larger spread ("hard" samples).
    GaussianMixtureImages,
    /// Continuous vectors `x = A z + b + σ ε` with `z, ε` standard normal.
    LinearGaussian,
}

impl std::str::FromStr for SyntheticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian_mixture_images" => Ok(Self::GaussianMixtureImages),
            "linear_gaussian" => Ok(Self::LinearGaussian),
            other => Err(Error::config(
                "synthetic.kind",
                format!("unsupported kind {other:?}; expected gaussian_mixture_images or linear_gaussian"),
            )),
        }
    }
}

fn default_components() -> usize {
    4
}
fn default_easy_std() -> f64 {
    0.05
}
fn default_hard_std() -> f64 {
    0.3
}
fn default_latent() -> usize {
    2
}
fn default_sigma() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    /// Training-set size.
    pub n_samples: usize,
    pub image_shape: (usize, usize, usize),
    pub seed: u64,
    /// Validation size; defaults to a quarter of `n_samples`.
    #[serde(default)]
    pub n_validation: Option<usize>,
    /// Test size; defaults to a quarter of `n_samples`.
    #[serde(default)]
    pub n_test: Option<usize>,
    #[serde(default = "default_components")]
    pub n_components: usize,
    /// Probability that a mixture sample is drawn with `hard_std`.
    #[serde(default)]
    pub hard_fraction: f64,
    #[serde(default = "default_easy_std")]
    pub easy_std: f64,
    #[serde(default = "default_hard_std")]
    pub hard_std: f64,
    /// Latent width of the linear-Gaussian kind.
    #[serde(default = "default_latent")]
    pub latent_dim: usize,
    /// Observation noise of the linear-Gaussian kind.
    #[serde(default = "default_sigma")]
    pub sigma: f64,
}

impl SyntheticSpec {
    pub fn new(kind: SyntheticKind, n_samples: usize, image_shape: (usize, usize, usize), seed: u64) -> Self {
        Self {
            kind,
            n_samples,
            image_shape,
            seed,
            n_validation: None,
            n_test: None,
            n_components: default_components(),
            hard_fraction: 0.0,
            easy_std: default_easy_std(),
            hard_std: default_hard_std(),
            latent_dim: default_latent(),
            sigma: default_sigma(),
        }
    }

    fn validate(&self) -> Result<()> {
        let (c, h, w) = self.image_shape;
        if self.n_samples == 0 {
            return Err(Error::config("synthetic.n_samples", "must be at least 1"));
        }
        if c * h * w == 0 {
            return Err(Error::config("synthetic.image_shape", "all dimensions must be positive"));
        }
        if !(0.0..=1.0).contains(&self.hard_fraction) {
            return Err(Error::config("synthetic.hard_fraction", "must lie in [0, 1]"));
        }
        if self.n_components == 0 {
            return Err(Error::config("synthetic.n_components", "must be at least 1"));
        }
        if self.kind == SyntheticKind::LinearGaussian && (self.latent_dim == 0 || !(self.sigma > 0.0)) {
            return Err(Error::config("synthetic.sigma", "linear_gaussian needs latent_dim >= 1 and sigma > 0"));
        }
        Ok(())
    }
}

/// True generator parameters of a linear-Gaussian dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearGaussianParams {
    /// (data_dim, latent_dim).
    pub a: Array2<f64>,
    pub b: Array1<f64>,
    pub sigma: f64,
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

pub fn make_synthetic(spec: &SyntheticSpec) -> Result<DatasetSplit> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_val = spec.n_validation.unwrap_or(spec.n_samples / 4);
    let n_test = spec.n_test.unwrap_or(spec.n_samples / 4);
    let shape = spec.image_shape;
    let dim = shape.0 * shape.1 * shape.2;
    match spec.kind {
        SyntheticKind::GaussianMixtureImages => {
            let centers: Vec<Vec<f64>> = (0..spec.n_components)
                .map(|_| (0..dim).map(|_| rng.random_range(-0.7..0.7)).collect())
                .collect();
            let mut draw = |n: usize| {
                let mut bytes = Vec::with_capacity(n * dim);
                let mut groups = Vec::with_capacity(n);
                for _ in 0..n {
                    let center = &centers[rng.random_range(0..spec.n_components)];
                    let hard = rng.random::<f64>() < spec.hard_fraction;
                    let std = if hard { spec.hard_std } else { spec.easy_std };
                    groups.push(u8::from(hard));
                    for &m in center {
                        let v = (m + std * normal(&mut rng)).clamp(-1.0, 1.0);
                        bytes.push(((v + 1.0) / 2.0 * 255.0).round() as u8);
                    }
                }
                (bytes, groups)
            };
            let (train, groups) = draw(spec.n_samples);
            let (val, _) = draw(n_val);
            let (test, _) = draw(n_test);
            Ok(DatasetSplit {
                name: "synthetic".into(),
                train: Samples::from_u8(shape, 255, &train)?,
                validation: Samples::from_u8(shape, 255, &val)?,
                test: Samples::from_u8(shape, 255, &test)?,
                image_shape: shape,
                pixel_max: Some(255),
                train_groups: Some(groups),
                linear_gaussian: None,
            })
        }
        SyntheticKind::LinearGaussian => {
            let k = spec.latent_dim;
            let a = Array2::from_shape_simple_fn((dim, k), || normal(&mut rng));
            let b = Array1::from_shape_simple_fn(dim, || 0.5 * normal(&mut rng));
            let mut draw = |n: usize| -> Vec<f32> {
                let mut out = Vec::with_capacity(n * dim);
                for _ in 0..n {
                    let z = Array1::from_shape_simple_fn(k, || normal(&mut rng));
                    let x = a.dot(&z) + &b;
                    out.extend(x.iter().map(|&v| (v + spec.sigma * normal(&mut rng)) as f32));
                }
                out
            };
            let train = draw(spec.n_samples);
            let val = draw(n_val);
            let test = draw(n_test);
            Ok(DatasetSplit {
                name: "linear_gaussian".into(),
                train: Samples::new(shape, None, train)?,
                validation: Samples::new(shape, None, val)?,
                test: Samples::new(shape, None, test)?,
                image_shape: shape,
                pixel_max: None,
                train_groups: None,
                linear_gaussian: Some(LinearGaussianParams { a, b, sigma: spec.sigma }),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixture_is_deterministic() {
        let spec = SyntheticSpec::new(SyntheticKind::GaussianMixtureImages, 512, (3, 8, 8), 7);
        let a = make_synthetic(&spec).unwrap();
        let b = make_synthetic(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.train.len(), 512);
    }

    #[test]
    fn linear_gaussian_exposes_parameters() {
        let mut spec = SyntheticSpec::new(SyntheticKind::LinearGaussian, 100, (2, 1, 1), 1);
        spec.latent_dim = 1;
        let d = make_synthetic(&spec).unwrap();
        let p = d.linear_gaussian.unwrap();
        assert_eq!(p.a.dim(), (2, 1));
        assert_eq!(p.b.len(), 2);
        assert_eq!(p.sigma, 0.1);
    }

    #[test]
    fn empty_and_unknown_rejected() {
        let spec = SyntheticSpec::new(SyntheticKind::GaussianMixtureImages, 0, (3, 8, 8), 7);
        assert!(make_synthetic(&spec).unwrap_err().is_config());
        assert!("swiss_roll".parse::<SyntheticKind>().unwrap_err().is_config());
    }
}
