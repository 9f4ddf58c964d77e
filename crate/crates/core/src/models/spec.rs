//! Layer tables for the generator, encoder and discriminator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{conv_output_size, deconv_output_size};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Generator,
    Encoder,
    Discriminator,
}

/// Input resolution variant; `Toy` selects the fully connected networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resolution {
    #[serde(rename = "28")]
    R28,
    #[serde(rename = "32")]
    R32,
    #[serde(rename = "64")]
    R64,
    Toy,
}

impl Resolution {
    pub fn for_image_size(size: usize) -> Option<Self> {
        match size {
            28 => Some(Self::R28),
            32 => Some(Self::R32),
            64 => Some(Self::R64),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    Deconv,
    Dense,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    None,
    BatchNorm,
    Spectral,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    None,
    Relu,
    LeakyRelu(f64),
    Tanh,
}

/// Which discriminator path a layer belongs to. Generators and encoders only use `Main`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Main,
    Image,
    Latent,
    Joint,
}

/// One row of a layer table. For dense layers `channels` is the number of
/// output units and the kernel fields are zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub stride: usize,
    pub padding: usize,
    pub kernel: usize,
    pub channels: usize,
    pub normalization: Normalization,
    pub activation: ActivationKind,
    pub branch: Branch,
}

const LRELU: ActivationKind = ActivationKind::LeakyRelu(0.1);

impl LayerSpec {
    fn conv(stride: usize, padding: usize, kernel: usize, channels: usize) -> Self {
        Self {
            kind: LayerKind::Conv,
            stride,
            padding,
            kernel,
            channels,
            normalization: Normalization::None,
            activation: ActivationKind::None,
            branch: Branch::Main,
        }
    }

    fn deconv(stride: usize, padding: usize, kernel: usize, channels: usize) -> Self {
        Self {
            kind: LayerKind::Deconv,
            ..Self::conv(stride, padding, kernel, channels)
        }
    }

    fn dense(units: usize) -> Self {
        Self {
            kind: LayerKind::Dense,
            ..Self::conv(0, 0, 0, units)
        }
    }

    fn norm(mut self, n: Normalization) -> Self {
        self.normalization = n;
        self
    }

    fn act(mut self, a: ActivationKind) -> Self {
        self.activation = a;
        self
    }

    fn branch(mut self, b: Branch) -> Self {
        self.branch = b;
        self
    }

    /// Output shape for a (channels, height, width) input.
    pub fn output_shape(&self, (c, h, w): (usize, usize, usize)) -> Option<(usize, usize, usize)> {
        let _ = c;
        match self.kind {
            LayerKind::Conv => Some((
                self.channels,
                conv_output_size(h, self.kernel, self.stride, self.padding)?,
                conv_output_size(w, self.kernel, self.stride, self.padding)?,
            )),
            LayerKind::Deconv => Some((
                self.channels,
                deconv_output_size(h, self.kernel, self.stride, self.padding)?,
                deconv_output_size(w, self.kernel, self.stride, self.padding)?,
            )),
            LayerKind::Dense => Some((self.channels, 1, 1)),
        }
    }
}

/// Architecture of one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub role: Role,
    pub resolution: Resolution,
    pub latent_dim: usize,
    /// Data shape (channels, height, width).
    pub image_shape: (usize, usize, usize),
    pub layers: Vec<LayerSpec>,
}

/// Specs for the three networks of a bidirectional GAN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecSet {
    pub generator: NetworkSpec,
    pub encoder: NetworkSpec,
    pub discriminator: NetworkSpec,
}

impl NetworkSpec {
    /// Five transposed convolutions with batch norm and ReLU, Tanh output.
    pub fn generator(resolution: Resolution, image_shape: (usize, usize, usize), latent_dim: usize) -> Self {
        use Normalization::BatchNorm;
        let c = image_shape.0;
        let layers = match resolution {
            Resolution::Toy => return Self::toy_generator(image_shape, latent_dim, 64),
            r => {
                let second_kernel = if r == Resolution::R28 { 3 } else { 4 };
                let last = if r == Resolution::R64 {
                    LayerSpec::deconv(2, 1, 4, c)
                } else {
                    LayerSpec::deconv(1, 1, 3, c)
                };
                vec![
                    LayerSpec::deconv(1, 0, 4, 512).norm(BatchNorm).act(ActivationKind::Relu),
                    LayerSpec::deconv(2, 1, second_kernel, 256).norm(BatchNorm).act(ActivationKind::Relu),
                    LayerSpec::deconv(2, 1, 4, 128).norm(BatchNorm).act(ActivationKind::Relu),
                    LayerSpec::deconv(2, 1, 4, 64).norm(BatchNorm).act(ActivationKind::Relu),
                    last.act(ActivationKind::Tanh),
                ]
            }
        };
        Self {
            role: Role::Generator,
            resolution,
            latent_dim,
            image_shape,
            layers,
        }
    }

    /// Seven LeakyReLU convolutions followed by a dense projection to the latent space.
    pub fn encoder(resolution: Resolution, image_shape: (usize, usize, usize), latent_dim: usize) -> Self {
        let layers = match resolution {
            Resolution::Toy => return Self::toy_encoder(image_shape, latent_dim, 64),
            r => {
                let fifth_stride = if r == Resolution::R64 { 2 } else { 1 };
                vec![
                    LayerSpec::conv(1, 1, 3, 64).act(LRELU),
                    LayerSpec::conv(2, 1, 4, 64).act(LRELU),
                    LayerSpec::conv(1, 1, 3, 128).act(LRELU),
                    LayerSpec::conv(2, 1, 4, 128).act(LRELU),
                    LayerSpec::conv(fifth_stride, 1, 3, 256).act(LRELU),
                    LayerSpec::conv(2, 1, 4, 256).act(LRELU),
                    LayerSpec::conv(1, 1, 3, 512).act(LRELU),
                    LayerSpec::dense(latent_dim),
                ]
            }
        };
        Self {
            role: Role::Encoder,
            resolution,
            latent_dim,
            image_shape,
            layers,
        }
    }

    /// Six spectrally normalized convolutions on the image, a 1x1 convolution on
    /// the latent, channel concatenation, two joint 1x1 convolutions and a dense logit.
    pub fn discriminator(resolution: Resolution, image_shape: (usize, usize, usize), latent_dim: usize) -> Self {
        use Normalization::Spectral;
        let layers = match resolution {
            Resolution::Toy => return Self::toy_discriminator(image_shape, latent_dim, 64),
            r => {
                let third_stride = if r == Resolution::R64 { 2 } else { 1 };
                // 28x28 inputs reach the sixth layer at 3x3; one pixel of
                // padding brings the image branch to 1x1.
                let sixth_pad = if r == Resolution::R28 { 1 } else { 0 };
                let img = |l: LayerSpec| l.norm(Spectral).act(LRELU).branch(Branch::Image);
                vec![
                    img(LayerSpec::conv(1, 1, 3, 64)),
                    img(LayerSpec::conv(2, 1, 4, 64)),
                    img(LayerSpec::conv(third_stride, 1, 4, 128)),
                    img(LayerSpec::conv(2, 1, 4, 128)),
                    img(LayerSpec::conv(1, 0, 4, 256)),
                    img(LayerSpec::conv(2, sixth_pad, 4, 256)),
                    LayerSpec::conv(1, 0, 1, 256).norm(Spectral).act(LRELU).branch(Branch::Latent),
                    LayerSpec::conv(1, 0, 1, 512).norm(Spectral).act(LRELU).branch(Branch::Joint),
                    LayerSpec::conv(1, 0, 1, 1024).norm(Spectral).act(LRELU).branch(Branch::Joint),
                    LayerSpec::dense(1).norm(Spectral).branch(Branch::Joint),
                ]
            }
        };
        Self {
            role: Role::Discriminator,
            resolution,
            latent_dim,
            image_shape,
            layers,
        }
    }

    pub fn toy_generator(data_shape: (usize, usize, usize), latent_dim: usize, width: usize) -> Self {
        let d = data_shape.0 * data_shape.1 * data_shape.2;
        Self {
            role: Role::Generator,
            resolution: Resolution::Toy,
            latent_dim,
            image_shape: data_shape,
            layers: vec![
                LayerSpec::dense(width).act(ActivationKind::Relu),
                LayerSpec::dense(width).act(ActivationKind::Relu),
                LayerSpec::dense(d).act(ActivationKind::Tanh),
            ],
        }
    }

    pub fn toy_encoder(data_shape: (usize, usize, usize), latent_dim: usize, width: usize) -> Self {
        Self {
            role: Role::Encoder,
            resolution: Resolution::Toy,
            latent_dim,
            image_shape: data_shape,
            layers: vec![
                LayerSpec::dense(width).act(LRELU),
                LayerSpec::dense(width).act(LRELU),
                LayerSpec::dense(latent_dim),
            ],
        }
    }

    pub fn toy_discriminator(data_shape: (usize, usize, usize), latent_dim: usize, width: usize) -> Self {
        use Normalization::Spectral;
        Self {
            role: Role::Discriminator,
            resolution: Resolution::Toy,
            latent_dim,
            image_shape: data_shape,
            layers: vec![
                LayerSpec::dense(width).norm(Spectral).act(LRELU).branch(Branch::Joint),
                LayerSpec::dense(width).norm(Spectral).act(LRELU).branch(Branch::Joint),
                LayerSpec::dense(1).norm(Spectral).branch(Branch::Joint),
            ],
        }
    }

    pub fn branch_layers(&self, branch: Branch) -> impl Iterator<Item = &LayerSpec> {
        self.layers.iter().filter(move |l| l.branch == branch)
    }

    /// Walks the layer table, returning the output shape or a shape error
    /// naming the first layer that cannot accept its input.
    pub fn trace(&self, input: (usize, usize, usize), branch: Branch) -> Result<(usize, usize, usize)> {
        let mut shape = input;
        for (i, layer) in self.layers.iter().enumerate().filter(|(_, l)| l.branch == branch) {
            shape = layer.output_shape(shape).ok_or_else(|| {
                Error::shape(
                    format!("{:?} layer {i} input", self.role),
                    format!("spatial extent >= kernel {} with padding {}", layer.kernel, layer.padding),
                    shape,
                )
            })?;
        }
        Ok(shape)
    }

    /// Checks that the table produces the shapes its role requires.
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::config("latent_dim", "must be positive"));
        }
        let (c, h, w) = self.image_shape;
        if c * h * w == 0 {
            return Err(Error::config("image_shape", "all dimensions must be positive"));
        }
        let toy = self.resolution == Resolution::Toy;
        match self.role {
            Role::Generator => {
                let input = (self.latent_dim, 1, 1);
                let out = self.trace(input, Branch::Main)?;
                let expected = if toy { (c * h * w, 1, 1) } else { self.image_shape };
                if out != expected {
                    return Err(Error::shape("generator output", expected, out));
                }
            }
            Role::Encoder => {
                let input = if toy { (c * h * w, 1, 1) } else { self.image_shape };
                let out = self.trace(input, Branch::Main)?;
                if out != (self.latent_dim, 1, 1) {
                    return Err(Error::shape("encoder output", (self.latent_dim, 1, 1), out));
                }
            }
            Role::Discriminator => {
                let input = if toy { (c * h * w, 1, 1) } else { self.image_shape };
                let img = self.trace(input, Branch::Image)?;
                let lat = self.trace((self.latent_dim, 1, 1), Branch::Latent)?;
                if (img.1, img.2) != (lat.1, lat.2) {
                    return Err(Error::shape(
                        "discriminator image branch output",
                        format!("spatial {:?} matching latent branch", (lat.1, lat.2)),
                        img,
                    ));
                }
                let out = self.trace((img.0 + lat.0, img.1, img.2), Branch::Joint)?;
                if out != (1, 1, 1) {
                    return Err(Error::shape("discriminator output", (1, 1, 1), out));
                }
            }
        }
        Ok(())
    }
}

impl SpecSet {
    pub fn standard(resolution: Resolution, image_shape: (usize, usize, usize), latent_dim: usize) -> Self {
        Self {
            generator: NetworkSpec::generator(resolution, image_shape, latent_dim),
            encoder: NetworkSpec::encoder(resolution, image_shape, latent_dim),
            discriminator: NetworkSpec::discriminator(resolution, image_shape, latent_dim),
        }
    }

    pub fn toy(data_shape: (usize, usize, usize), latent_dim: usize, width: usize) -> Self {
        Self {
            generator: NetworkSpec::toy_generator(data_shape, latent_dim, width),
            encoder: NetworkSpec::toy_encoder(data_shape, latent_dim, width),
            discriminator: NetworkSpec::toy_discriminator(data_shape, latent_dim, width),
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.generator.latent_dim
    }

    pub fn image_shape(&self) -> (usize, usize, usize) {
        self.generator.image_shape
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.generator;
        for (name, s) in [("encoder", &self.encoder), ("discriminator", &self.discriminator)] {
            if s.latent_dim != g.latent_dim {
                return Err(Error::config(
                    "latent_dim",
                    format!("{name} has {} but generator has {}", s.latent_dim, g.latent_dim),
                ));
            }
            if s.resolution != g.resolution || s.image_shape != g.image_shape {
                return Err(Error::config(
                    "resolution",
                    format!("{name} resolution/shape differs from the generator's"),
                ));
            }
        }
        for (role, s) in [
            (Role::Generator, g),
            (Role::Encoder, &self.encoder),
            (Role::Discriminator, &self.discriminator),
        ] {
            if s.role != role {
                return Err(Error::config("role", format!("expected a {role:?} spec, got {:?}", s.role)));
            }
            s.validate()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_sizes_for_resolution_32() {
        let s = SpecSet::standard(Resolution::R32, (3, 32, 32), 256);
        assert_eq!(s.generator.layers.len(), 5);
        assert!(s.generator.layers.iter().all(|l| l.kind == LayerKind::Deconv));
        let enc_convs = s.encoder.layers.iter().filter(|l| l.kind == LayerKind::Conv).count();
        assert_eq!(enc_convs, 7);
        assert_eq!(s.encoder.layers.last().unwrap().kind, LayerKind::Dense);
        assert_eq!(s.discriminator.layers.len(), 10);
        s.validate().unwrap();
    }

    #[test]
    fn every_resolution_validates() {
        SpecSet::standard(Resolution::R28, (1, 28, 28), 256).validate().unwrap();
        SpecSet::standard(Resolution::R64, (3, 64, 64), 256).validate().unwrap();
        SpecSet::toy((1, 4, 4), 16, 64).validate().unwrap();
    }

    #[test]
    fn encoder_trace_reaches_4x4x512_before_dense() {
        let e = NetworkSpec::encoder(Resolution::R32, (3, 32, 32), 256);
        let mut shape = e.image_shape;
        for l in &e.layers[..7] {
            shape = l.output_shape(shape).unwrap();
        }
        assert_eq!(shape, (512, 4, 4));
    }

    #[test]
    fn wrong_input_size_fails_loudly() {
        let mut d = NetworkSpec::discriminator(Resolution::R32, (3, 32, 32), 256);
        d.image_shape = (3, 24, 24);
        assert!(matches!(d.validate(), Err(Error::Shape { .. })));
    }

    #[test]
    fn mismatched_latent_dims_rejected() {
        let mut s = SpecSet::standard(Resolution::R32, (3, 32, 32), 256);
        s.encoder.latent_dim = 128;
        assert!(matches!(s.validate(), Err(Error::Config { .. })));
    }
}
