use ndarray::{Array1, Array2, ArrayD, Axis, Ix2};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::spectral::SpectralNorm;
use super::{as_tensor, flatten, Param, Tensor};
use crate::error::{Error, Result};

/// Fully connected layer over the flattened input; output has a 1x1 spatial extent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// Weight of shape (out, in).
    pub weight: Param,
    pub bias: Param,
    pub spectral: Option<SpectralNorm>,
}

#[derive(Debug, Clone)]
pub struct DenseCache {
    x: Array2<f64>,
    input_dim: (usize, usize, usize, usize),
    w_eff: Array2<f64>,
    sigma: Option<(f64, Array1<f64>)>,
}

impl Dense {
    pub fn new<R: Rng>(inputs: usize, outputs: usize, spectral: bool, init_std: f64, rng: &mut R) -> Self {
        let dist = Normal::new(0.0, init_std).expect("valid std");
        let weight = ArrayD::from_shape_fn(vec![outputs, inputs], |_| dist.sample(rng));
        let mut dense = Self {
            weight: Param::new(weight),
            bias: Param::new(ArrayD::zeros(vec![outputs])),
            spectral: spectral.then(|| SpectralNorm::new(outputs, rng)),
        };
        let w = dense.weight_matrix();
        if let Some(sn) = dense.spectral.as_mut() {
            sn.converge(&w.view(), 50);
        }
        dense
    }

    pub fn inputs(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn weight_matrix(&self) -> Array2<f64> {
        self.weight.value.clone().into_dimensionality::<Ix2>().expect("rank 2")
    }

    pub fn power_iterate(&mut self) {
        let w = self.weight_matrix();
        if let Some(sn) = self.spectral.as_mut() {
            sn.power_iterate(&w.view());
        }
    }

    pub fn effective_weight(&self) -> Array2<f64> {
        let w = self.weight_matrix();
        match &self.spectral {
            Some(sn) => {
                let (sigma, _) = sn.sigma(&w.view());
                w / sigma
            }
            None => w,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, DenseCache)> {
        let flat = flatten(x);
        if flat.ncols() != self.inputs() {
            return Err(Error::shape(
                "dense input",
                format!("(batch, {} flattened features)", self.inputs()),
                x.shape(),
            ));
        }
        let wm = self.weight_matrix();
        let (w_eff, sigma) = match &self.spectral {
            Some(sn) => {
                let (s, v) = sn.sigma(&wm.view());
                (&wm / s, Some((s, v)))
            }
            None => (wm, None),
        };
        let bias: Array1<f64> = self.bias.value.view().into_dimensionality().expect("rank 1").to_owned();
        let y = flat.dot(&w_eff.t()) + &bias;
        let input_dim = x.dim();
        Ok((
            as_tensor(&y),
            DenseCache {
                x: flat,
                input_dim,
                w_eff,
                sigma,
            },
        ))
    }

    pub fn backward(&mut self, cache: &DenseCache, grad_out: &Tensor) -> Tensor {
        let g = flatten(grad_out);
        let d_bias = g.sum_axis(Axis(0));
        let d_weff = g.t().dot(&cache.x);
        let dx = g.dot(&cache.w_eff);
        let d_w = match (&self.spectral, &cache.sigma) {
            (Some(sn), Some((sigma, v))) => {
                let wm = self.weight_matrix();
                sn.backward(&wm.view(), &d_weff.view(), *sigma, v)
            }
            _ => d_weff,
        };
        self.weight.accumulate(d_w.into_dyn().view());
        self.bias.accumulate(d_bias.into_dyn().view());
        dx.into_shape_with_order(cache.input_dim).expect("reshape")
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }
}
