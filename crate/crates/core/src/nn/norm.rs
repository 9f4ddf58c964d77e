use ndarray::{Array1, Array2, ArrayD, Axis};
use serde::{Deserialize, Serialize};

use super::{Mode, Param, Tensor};
use crate::error::{Error, Result};

/// Per-channel batch normalization with affine parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm2d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub momentum: f64,
    pub eps: f64,
}

#[derive(Debug, Clone)]
pub struct BatchNormCache {
    x_hat: Array2<f64>,
    inv_std: Array1<f64>,
    dim: (usize, usize, usize, usize),
}

/// Batch statistics observed in a training forward pass.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Array1<f64>,
    pub unbiased_var: Array1<f64>,
}

fn to_channel_rows(x: &Tensor) -> Array2<f64> {
    let (n, c, h, w) = x.dim();
    x.view()
        .permuted_axes([1, 0, 2, 3])
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((c, n * h * w))
        .expect("reshape")
}

fn from_channel_rows(m: Array2<f64>, dim: (usize, usize, usize, usize)) -> Tensor {
    let (n, c, h, w) = dim;
    m.into_shape_with_order((c, n, h, w))
        .expect("reshape")
        .permuted_axes([1, 0, 2, 3])
        .as_standard_layout()
        .into_owned()
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::new(ArrayD::ones(vec![channels])),
            beta: Param::new(ArrayD::zeros(vec![channels])),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    fn affine(&self) -> (Array1<f64>, Array1<f64>) {
        (
            self.gamma.value.view().into_dimensionality().expect("rank 1").to_owned(),
            self.beta.value.view().into_dimensionality().expect("rank 1").to_owned(),
        )
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<(Tensor, BatchNormCache, Option<BatchStats>)> {
        let dim = x.dim();
        if dim.1 != self.channels() {
            return Err(Error::shape(
                "batch norm input",
                format!("(batch, {}, h, w)", self.channels()),
                x.shape(),
            ));
        }
        let rows = to_channel_rows(x);
        let m = rows.ncols() as f64;
        let (mean, var, stats) = match mode {
            Mode::Eval => (self.running_mean.clone(), self.running_var.clone(), None),
            Mode::Train | Mode::BatchStats => {
                let mean = rows.mean_axis(Axis(1)).expect("non-empty batch");
                let centered = &rows - &mean.view().insert_axis(Axis(1));
                let var = centered.mapv(|v| v * v).sum_axis(Axis(1)) / m;
                let stats = (mode == Mode::Train).then(|| BatchStats {
                    mean: mean.clone(),
                    unbiased_var: if m > 1.0 { &var * (m / (m - 1.0)) } else { var.clone() },
                });
                (mean, var, stats)
            }
        };
        let inv_std = var.mapv(|v| 1.0 / (v + self.eps).sqrt());
        let x_hat = (&rows - &mean.view().insert_axis(Axis(1))) * inv_std.view().insert_axis(Axis(1));
        let (gamma, beta) = self.affine();
        let y = &x_hat * &gamma.view().insert_axis(Axis(1)) + beta.view().insert_axis(Axis(1));
        Ok((from_channel_rows(y, dim), BatchNormCache { x_hat, inv_std, dim }, stats))
    }

    pub fn apply_stats(&mut self, stats: &BatchStats) {
        let m = self.momentum;
        self.running_mean = &self.running_mean * (1.0 - m) + &stats.mean * m;
        self.running_var = &self.running_var * (1.0 - m) + &stats.unbiased_var * m;
    }

    /// Backward through batch statistics (training-mode normalization).
    pub fn backward(&mut self, cache: &BatchNormCache, grad_out: &Tensor) -> Tensor {
        let g = to_channel_rows(grad_out);
        let m = g.ncols() as f64;
        let (gamma, _) = self.affine();
        let d_beta = g.sum_axis(Axis(1));
        let d_gamma = (&g * &cache.x_hat).sum_axis(Axis(1));
        let dx_hat = &g * &gamma.view().insert_axis(Axis(1));
        let sum_dx_hat = dx_hat.sum_axis(Axis(1)).insert_axis(Axis(1));
        let sum_dx_hat_xhat = (&dx_hat * &cache.x_hat).sum_axis(Axis(1)).insert_axis(Axis(1));
        let dx = (dx_hat * m - sum_dx_hat - &cache.x_hat * &sum_dx_hat_xhat)
            * (&cache.inv_std / m).view().insert_axis(Axis(1));
        self.gamma.accumulate(d_gamma.into_dyn().view());
        self.beta.accumulate(d_beta.into_dyn().view());
        from_channel_rows(dx, cache.dim)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta]
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.gamma, &self.beta]
    }
}
