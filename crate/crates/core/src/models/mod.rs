//! Generator, encoder and discriminator networks.

pub mod checkpoint;
mod spec;

pub use checkpoint::Checkpoint;
pub use spec::{ActivationKind, Branch, LayerKind, LayerSpec, NetworkSpec, Normalization, Resolution, Role, SpecSet};

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    as_tensor, concat_channels, flatten, Activation, BatchNorm2d, Conv2d, ConvTranspose2d, Dense, Layer, Mode,
    Module, Param, Sequential, SequentialCache, Tensor,
};

/// Standard deviation of the normal weight initialization.
pub const INIT_STD: f64 = 0.02;

fn build_layers<R: rand::Rng>(
    layers: &[&LayerSpec],
    input: (usize, usize, usize),
    rng: &mut R,
) -> Result<(Sequential, (usize, usize, usize))> {
    let mut out = Vec::new();
    let mut shape = input;
    for spec in layers {
        let spectral = spec.normalization == Normalization::Spectral;
        let layer = match spec.kind {
            LayerKind::Conv => Layer::Conv(Conv2d::new(
                shape.0,
                spec.channels,
                spec.kernel,
                spec.stride,
                spec.padding,
                spectral,
                INIT_STD,
                rng,
            )),
            LayerKind::Deconv => {
                if spectral {
                    return Err(Error::config("normalization", "spectral norm is not supported on deconv layers"));
                }
                Layer::Deconv(ConvTranspose2d::new(
                    shape.0,
                    spec.channels,
                    spec.kernel,
                    spec.stride,
                    spec.padding,
                    INIT_STD,
                    rng,
                ))
            }
            LayerKind::Dense => Layer::Dense(Dense::new(shape.0 * shape.1 * shape.2, spec.channels, spectral, INIT_STD, rng)),
        };
        shape = layer
            .output_shape(shape)
            .ok_or_else(|| Error::shape("layer input", "compatible shape", shape))?;
        out.push(layer);
        if spec.normalization == Normalization::BatchNorm {
            out.push(Layer::BatchNorm(BatchNorm2d::new(shape.0)));
        }
        match spec.activation {
            ActivationKind::None => {}
            ActivationKind::Relu => out.push(Layer::Activation(Activation::Relu)),
            ActivationKind::LeakyRelu(s) => out.push(Layer::Activation(Activation::LeakyRelu(s))),
            ActivationKind::Tanh => out.push(Layer::Activation(Activation::Tanh)),
        }
    }
    Ok((Sequential::new(out), shape))
}

/// Maps latent vectors to data samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub net: Sequential,
    pub latent_dim: usize,
    pub image_shape: (usize, usize, usize),
}

/// Maps data samples to latent vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub net: Sequential,
    pub latent_dim: usize,
    pub image_shape: (usize, usize, usize),
}

/// Scores (image, latent) pairs. The image path and latent path are joined by
/// channel concatenation. When the image path is empty the image is flattened
/// first (fully connected variant).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discriminator {
    pub image_branch: Sequential,
    pub latent_branch: Sequential,
    pub joint: Sequential,
    pub latent_dim: usize,
    pub image_shape: (usize, usize, usize),
}

#[derive(Debug, Clone)]
pub struct DiscriminatorCache {
    image: SequentialCache,
    latent: SequentialCache,
    joint: SequentialCache,
    image_channels: usize,
    image_out_shape: (usize, usize, usize, usize),
}

fn check_image(x: &Tensor, shape: (usize, usize, usize), name: &str) -> Result<()> {
    let (_, c, h, w) = x.dim();
    if (c, h, w) != shape || x.shape()[0] == 0 {
        return Err(Error::shape(name, format!("(batch>=1, {}, {}, {})", shape.0, shape.1, shape.2), x.shape()));
    }
    Ok(())
}

fn check_latent(z: &Array2<f64>, latent_dim: usize, name: &str) -> Result<()> {
    if z.ncols() != latent_dim || z.nrows() == 0 {
        return Err(Error::shape(name, format!("(batch>=1, {latent_dim})"), z.shape()));
    }
    Ok(())
}

fn to_image(y: Tensor, shape: (usize, usize, usize)) -> Tensor {
    let n = y.shape()[0];
    if (y.shape()[1], y.shape()[2], y.shape()[3]) == shape {
        y
    } else {
        y.as_standard_layout()
            .into_owned()
            .into_shape_with_order((n, shape.0, shape.1, shape.2))
            .expect("generator output size")
    }
}

fn reshape_like(g: &Tensor, n: usize, raw: (usize, usize, usize)) -> Tensor {
    g.as_standard_layout()
        .into_owned()
        .into_shape_with_order((n, raw.0, raw.1, raw.2))
        .expect("reshape")
}

impl Generator {
    fn raw_output(&self) -> (usize, usize, usize) {
        self.net
            .output_shape((self.latent_dim, 1, 1))
            .expect("validated at build time")
    }

    pub fn forward(&mut self, z: &Array2<f64>, mode: Mode) -> Result<(Tensor, SequentialCache)> {
        check_latent(z, self.latent_dim, "latent batch z")?;
        let (y, cache) = self.net.forward(&as_tensor(z), mode)?;
        Ok((to_image(y, self.image_shape), cache))
    }

    pub fn backward(&mut self, cache: &SequentialCache, grad: &Tensor) -> Array2<f64> {
        let n = grad.shape()[0];
        let g = reshape_like(grad, n, self.raw_output());
        flatten(&self.net.backward(cache, &g))
    }

    pub fn infer(&self, z: &Array2<f64>, mode: Mode) -> Result<Tensor> {
        check_latent(z, self.latent_dim, "latent batch z")?;
        Ok(to_image(self.net.infer(&as_tensor(z), mode)?, self.image_shape))
    }
}

impl Encoder {
    fn input(&self, x: &Tensor) -> Tensor {
        // fully connected encoders take flattened input
        match self.net.layers.first() {
            Some(Layer::Dense(_)) => as_tensor(&flatten(x)),
            _ => x.clone(),
        }
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<(Array2<f64>, SequentialCache)> {
        check_image(x, self.image_shape, "image batch x")?;
        let (y, cache) = self.net.forward(&self.input(x), mode)?;
        Ok((flatten(&y), cache))
    }

    pub fn backward(&mut self, cache: &SequentialCache, grad: &Array2<f64>) -> Tensor {
        let n = grad.nrows();
        let gx = self.net.backward(cache, &as_tensor(grad));
        let (c, h, w) = self.image_shape;
        reshape_like(&gx, n, (c, h, w))
    }

    pub fn infer(&self, x: &Tensor, mode: Mode) -> Result<Array2<f64>> {
        check_image(x, self.image_shape, "image batch x")?;
        Ok(flatten(&self.net.infer(&self.input(x), mode)?))
    }
}

impl Discriminator {
    fn image_input(&self, x: &Tensor) -> Tensor {
        if self.image_branch.is_empty() {
            as_tensor(&flatten(x))
        } else {
            x.clone()
        }
    }

    pub fn forward(&mut self, x: &Tensor, z: &Array2<f64>, mode: Mode) -> Result<(Array1<f64>, DiscriminatorCache)> {
        check_image(x, self.image_shape, "discriminator image input")?;
        check_latent(z, self.latent_dim, "discriminator latent input")?;
        if x.shape()[0] != z.nrows() {
            return Err(Error::shape("discriminator latent input", format!("batch {}", x.shape()[0]), z.shape()));
        }
        let (hx, image) = self.image_branch.forward(&self.image_input(x), mode)?;
        let (hz, latent) = self.latent_branch.forward(&as_tensor(z), mode)?;
        let joint_in = concat_channels(&hx, &hz);
        let (out, joint) = self.joint.forward(&joint_in, mode)?;
        Ok((
            flatten(&out).column(0).to_owned(),
            DiscriminatorCache {
                image,
                latent,
                joint,
                image_channels: hx.shape()[1],
                image_out_shape: hx.dim(),
            },
        ))
    }

    /// Returns gradients with respect to the image and latent inputs.
    pub fn backward(&mut self, cache: &DiscriminatorCache, grad: &Array1<f64>) -> (Tensor, Array2<f64>) {
        let n = grad.len();
        let g = grad.clone().into_shape_with_order((n, 1, 1, 1)).expect("reshape");
        let g_joint = self.joint.backward(&cache.joint, &g);
        let c = cache.image_channels;
        let g_hx = g_joint.slice(ndarray::s![.., ..c, .., ..]).to_owned();
        let g_hz = g_joint.slice(ndarray::s![.., c.., .., ..]).to_owned();
        debug_assert_eq!(g_hx.dim(), cache.image_out_shape);
        let gx = self.image_branch.backward(&cache.image, &g_hx);
        let gz = self.latent_branch.backward(&cache.latent, &g_hz);
        let (ic, ih, iw) = self.image_shape;
        (reshape_like(&gx, n, (ic, ih, iw)), flatten(&gz))
    }

    pub fn infer(&self, x: &Tensor, z: &Array2<f64>, mode: Mode) -> Result<Array1<f64>> {
        check_image(x, self.image_shape, "discriminator image input")?;
        check_latent(z, self.latent_dim, "discriminator latent input")?;
        let hx = self.image_branch.infer(&self.image_input(x), mode)?;
        let hz = self.latent_branch.infer(&as_tensor(z), mode)?;
        let out = self.joint.infer(&concat_channels(&hx, &hz), mode)?;
        Ok(flatten(&out).column(0).to_owned())
    }

    /// One power-iteration step for every spectrally normalized layer.
    pub fn power_iterate(&mut self) {
        self.image_branch.power_iterate();
        self.latent_branch.power_iterate();
        self.joint.power_iterate();
    }

    /// Effective (normalized) weight matrices of all spectrally normalized layers.
    pub fn normalized_weights(&self) -> Vec<Array2<f64>> {
        [&self.image_branch, &self.latent_branch, &self.joint]
            .into_iter()
            .flat_map(|s| s.layers.iter())
            .filter_map(|l| match l {
                Layer::Conv(c) if c.spectral.is_some() => Some(c.effective_weight()),
                Layer::Dense(d) if d.spectral.is_some() => Some(d.effective_weight()),
                _ => None,
            })
            .collect()
    }
}

macro_rules! impl_module {
    ($t:ty, $($field:ident),+) => {
        impl Module for $t {
            fn params(&self) -> Vec<&Param> {
                let mut v = Vec::new();
                $(v.extend(self.$field.params());)+
                v
            }
            fn params_mut(&mut self) -> Vec<&mut Param> {
                let mut v = Vec::new();
                $(v.extend(self.$field.params_mut());)+
                v
            }
        }
    };
}

impl_module!(Generator, net);
impl_module!(Encoder, net);
impl_module!(Discriminator, image_branch, latent_branch, joint);

/// Generator, encoder and discriminator built from a consistent spec set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelTriple {
    pub specs: SpecSet,
    pub generator: Generator,
    pub encoder: Encoder,
    pub discriminator: Discriminator,
}

/// Builds all three networks. Initialization is deterministic given `seed`.
pub fn build_triple(specs: &SpecSet, seed: u64) -> Result<ModelTriple> {
    specs.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let latent = specs.latent_dim();
    let image_shape = specs.image_shape();
    let (c, h, w) = image_shape;
    let toy = specs.generator.resolution == Resolution::Toy;
    let data_in = if toy { (c * h * w, 1, 1) } else { image_shape };

    let g_layers: Vec<_> = specs.generator.layers.iter().collect();
    let (g_net, _) = build_layers(&g_layers, (latent, 1, 1), &mut rng)?;
    let e_layers: Vec<_> = specs.encoder.layers.iter().collect();
    let (e_net, _) = build_layers(&e_layers, data_in, &mut rng)?;

    let d = &specs.discriminator;
    let img: Vec<_> = d.branch_layers(Branch::Image).collect();
    let (image_branch, img_shape) = build_layers(&img, data_in, &mut rng)?;
    let lat: Vec<_> = d.branch_layers(Branch::Latent).collect();
    let (latent_branch, lat_shape) = build_layers(&lat, (latent, 1, 1), &mut rng)?;
    let joint: Vec<_> = d.branch_layers(Branch::Joint).collect();
    let (joint, _) = build_layers(&joint, (img_shape.0 + lat_shape.0, img_shape.1, img_shape.2), &mut rng)?;

    Ok(ModelTriple {
        specs: specs.clone(),
        generator: Generator {
            net: g_net,
            latent_dim: latent,
            image_shape,
        },
        encoder: Encoder {
            net: e_net,
            latent_dim: latent,
            image_shape,
        },
        discriminator: Discriminator {
            image_branch,
            latent_branch,
            joint,
            latent_dim: latent,
            image_shape,
        },
    })
}

impl ModelTriple {
    pub fn latent_dim(&self) -> usize {
        self.specs.latent_dim()
    }

    pub fn image_shape(&self) -> (usize, usize, usize) {
        self.specs.image_shape()
    }

    /// Discriminator logits for real pairs `(x, E(x))` and fake pairs `(G(z), z)`.
    pub fn forward_joint(&self, x: &Tensor, z: &Array2<f64>, mode: Mode) -> Result<(Array1<f64>, Array1<f64>)> {
        let z_enc = self.encoder.infer(x, mode)?;
        let real = self.discriminator.infer(x, &z_enc, mode)?;
        let x_gen = self.generator.infer(z, mode)?;
        let fake = self.discriminator.infer(&x_gen, z, mode)?;
        Ok((real, fake))
    }

    /// `G(E(x))` without side effects.
    pub fn reconstruct(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let z = self.encoder.infer(x, mode)?;
        self.generator.infer(&z, mode)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;
    use rand_distr::{Distribution, StandardNormal};

    fn latent(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, d), |_| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn toy_triple_shapes() {
        let specs = SpecSet::toy((1, 4, 4), 8, 16);
        let t = build_triple(&specs, 1).unwrap();
        let x = Array4::zeros((3, 1, 4, 4));
        let (r, f) = t.forward_joint(&x, &latent(3, 8, 2), Mode::Eval).unwrap();
        assert_eq!((r.len(), f.len()), (3, 3));
        assert_eq!(t.generator.infer(&latent(2, 8, 3), Mode::Eval).unwrap().shape(), &[2, 1, 4, 4]);
    }

    #[test]
    fn same_seed_gives_identical_parameters() {
        let specs = SpecSet::toy((2, 3, 1), 4, 8);
        assert_eq!(build_triple(&specs, 9).unwrap(), build_triple(&specs, 9).unwrap());
        assert_ne!(build_triple(&specs, 9).unwrap(), build_triple(&specs, 10).unwrap());
    }

    #[test]
    fn generator_output_in_tanh_range() {
        let specs = SpecSet::toy((1, 4, 4), 8, 16);
        let mut t = build_triple(&specs, 4).unwrap();
        // blow up the output layer so pre-activations are large
        if let Some(Layer::Dense(d)) = t.generator.net.layers.iter_mut().rev().find(|l| matches!(l, Layer::Dense(_))) {
            d.weight.value.mapv_inplace(|v| v * 1e4);
        }
        let y = t.generator.infer(&latent(64, 8, 5), Mode::Eval).unwrap();
        assert!(y.iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn wrong_channel_count_names_the_tensor() {
        let specs = SpecSet::toy((1, 4, 4), 8, 16);
        let t = build_triple(&specs, 1).unwrap();
        let x = Array4::zeros((2, 3, 4, 4));
        let err = t.forward_joint(&x, &latent(2, 8, 1), Mode::Eval).unwrap_err();
        assert!(err.to_string().contains("image batch x"), "{err}");
    }

    #[test]
    fn inconsistent_specs_rejected() {
        let mut specs = SpecSet::toy((1, 4, 4), 8, 16);
        specs.discriminator = NetworkSpec::toy_discriminator((1, 4, 4), 6, 16);
        assert!(build_triple(&specs, 0).unwrap_err().is_config());
    }
}
