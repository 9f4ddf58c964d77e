//! Minimal reverse-mode neural network layers over `f64` tensors.
//!
//! Every activation is a rank-4 tensor laid out as (batch, channels, height,
//! width); dense layers use a 1x1 spatial extent. Layers return an explicit
//! cache from `forward` so the same network can be evaluated several times
//! before any backward pass runs, with parameter gradients accumulating.

mod activation;
mod conv;
mod dense;
mod norm;
mod optim;
mod sequential;
mod spectral;

pub use activation::Activation;
pub use conv::{col2im, conv_output_size, deconv_output_size, im2col, Conv2d, ConvTranspose2d};
pub use dense::Dense;
pub use norm::BatchNorm2d;
pub use optim::{Adam, AdamConfig, AdamState};
pub use sequential::{Layer, LayerCache, Sequential, SequentialCache};
pub use spectral::{spectral_norm_estimate, SpectralNorm};

use ndarray::{Array2, Array4, ArrayD, ArrayViewD, Axis};
use serde::{Deserialize, Serialize};

/// Activation tensor in (batch, channels, height, width) layout.
pub type Tensor = Array4<f64>;

/// How a forward pass treats batch normalization and spectral normalization state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, running statistics updated.
    Train,
    /// Batch statistics, running statistics left untouched.
    BatchStats,
    /// Running statistics.
    Eval,
}

/// A trainable tensor with its accumulated gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub value: ArrayD<f64>,
    #[serde(skip)]
    grad: Option<ArrayD<f64>>,
}

impl Param {
    pub fn new(value: ArrayD<f64>) -> Self {
        Self { value, grad: None }
    }

    pub fn accumulate(&mut self, g: ArrayViewD<f64>) {
        debug_assert_eq!(g.shape(), self.value.shape());
        match self.grad.as_mut() {
            Some(acc) => *acc += &g,
            None => self.grad = Some(g.to_owned()),
        }
    }

    /// Accumulated gradient, zeros if nothing has been accumulated.
    pub fn grad(&self) -> ArrayD<f64> {
        self.grad
            .clone()
            .unwrap_or_else(|| ArrayD::zeros(self.value.raw_dim()))
    }

    pub fn has_grad(&self) -> bool {
        self.grad.is_some()
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Common access to the trainable parameters of a network.
pub trait Module {
    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}

/// Flattens a (batch, c, h, w) tensor into a (batch, c*h*w) matrix.
pub fn flatten(x: &Tensor) -> Array2<f64> {
    let n = x.shape()[0];
    let rest = x.len() / n.max(1);
    x.as_standard_layout()
        .into_owned()
        .into_shape_with_order((n, rest))
        .expect("standard layout reshape")
}

/// Reshapes a (batch, d) matrix into a (batch, d, 1, 1) tensor.
pub fn as_tensor(x: &Array2<f64>) -> Tensor {
    let (n, d) = x.dim();
    x.as_standard_layout()
        .into_owned()
        .into_shape_with_order((n, d, 1, 1))
        .expect("standard layout reshape")
}

/// Concatenates two tensors along the channel axis.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Tensor {
    ndarray::concatenate(Axis(1), &[a.view(), b.view()]).expect("matching batch and spatial dims")
}
