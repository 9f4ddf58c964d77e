use serde::{Deserialize, Serialize};

use super::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Tanh,
}

impl Activation {
    pub fn forward(&self, x: &Tensor) -> Tensor {
        match *self {
            Activation::Relu => x.mapv(|v| v.max(0.0)),
            Activation::LeakyRelu(slope) => x.mapv(|v| if v > 0.0 { v } else { slope * v }),
            Activation::Tanh => x.mapv(f64::tanh),
        }
    }

    /// Gradient given the layer input `x` and output `y`.
    pub fn backward(&self, x: &Tensor, y: &Tensor, grad_out: &Tensor) -> Tensor {
        match *self {
            Activation::Relu => {
                let mut g = grad_out.clone();
                g.zip_mut_with(x, |g, &x| {
                    if x <= 0.0 {
                        *g = 0.0
                    }
                });
                g
            }
            Activation::LeakyRelu(slope) => {
                let mut g = grad_out.clone();
                g.zip_mut_with(x, |g, &x| {
                    if x <= 0.0 {
                        *g *= slope
                    }
                });
                g
            }
            Activation::Tanh => {
                let mut g = grad_out.clone();
                g.zip_mut_with(y, |g, &y| *g *= 1.0 - y * y);
                g
            }
        }
    }
}
