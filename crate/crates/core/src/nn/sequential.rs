use serde::{Deserialize, Serialize};

use super::conv::{ConvCache, DeconvCache};
use super::dense::DenseCache;
use super::norm::{BatchNormCache, BatchStats};
use super::{Activation, BatchNorm2d, Conv2d, ConvTranspose2d, Dense, Mode, Module, Param, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Layer {
    Conv(Conv2d),
    Deconv(ConvTranspose2d),
    Dense(Dense),
    BatchNorm(BatchNorm2d),
    Activation(Activation),
}

#[derive(Debug, Clone)]
pub enum LayerCache {
    Conv(ConvCache),
    Deconv(DeconvCache),
    Dense(DenseCache),
    BatchNorm(BatchNormCache),
    Activation { x: Tensor, y: Tensor },
}

impl Layer {
    fn forward(&self, x: &Tensor, mode: Mode) -> Result<(Tensor, LayerCache, Option<BatchStats>)> {
        Ok(match self {
            Layer::Conv(l) => {
                let (y, c) = l.forward(x)?;
                (y, LayerCache::Conv(c), None)
            }
            Layer::Deconv(l) => {
                let (y, c) = l.forward(x)?;
                (y, LayerCache::Deconv(c), None)
            }
            Layer::Dense(l) => {
                let (y, c) = l.forward(x)?;
                (y, LayerCache::Dense(c), None)
            }
            Layer::BatchNorm(l) => {
                let (y, c, s) = l.forward(x, mode)?;
                (y, LayerCache::BatchNorm(c), s)
            }
            Layer::Activation(a) => {
                let y = a.forward(x);
                (y.clone(), LayerCache::Activation { x: x.clone(), y }, None)
            }
        })
    }

    fn backward(&mut self, cache: &LayerCache, grad: &Tensor) -> Tensor {
        match (self, cache) {
            (Layer::Conv(l), LayerCache::Conv(c)) => l.backward(c, grad),
            (Layer::Deconv(l), LayerCache::Deconv(c)) => l.backward(c, grad),
            (Layer::Dense(l), LayerCache::Dense(c)) => l.backward(c, grad),
            (Layer::BatchNorm(l), LayerCache::BatchNorm(c)) => l.backward(c, grad),
            (Layer::Activation(a), LayerCache::Activation { x, y }) => a.backward(x, y, grad),
            _ => panic!("layer/cache kind mismatch"),
        }
    }

    fn params(&self) -> Vec<&Param> {
        match self {
            Layer::Conv(l) => l.params(),
            Layer::Deconv(l) => l.params(),
            Layer::Dense(l) => l.params(),
            Layer::BatchNorm(l) => l.params(),
            Layer::Activation(_) => Vec::new(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Layer::Conv(l) => l.params_mut(),
            Layer::Deconv(l) => l.params_mut(),
            Layer::Dense(l) => l.params_mut(),
            Layer::BatchNorm(l) => l.params_mut(),
            Layer::Activation(_) => Vec::new(),
        }
    }

    /// Output shape for an input shape, or `None` if the layer cannot accept it.
    pub fn output_shape(&self, (c, h, w): (usize, usize, usize)) -> Option<(usize, usize, usize)> {
        match self {
            Layer::Conv(l) => {
                if c != l.in_channels() {
                    return None;
                }
                let (oh, ow) = l.output_size(h, w)?;
                Some((l.out_channels(), oh, ow))
            }
            Layer::Deconv(l) => {
                if c != l.in_channels() {
                    return None;
                }
                let (oh, ow) = l.output_size(h, w)?;
                Some((l.out_channels(), oh, ow))
            }
            Layer::Dense(l) => (c * h * w == l.inputs()).then_some((l.outputs(), 1, 1)),
            Layer::BatchNorm(l) => (c == l.channels()).then_some((c, h, w)),
            Layer::Activation(_) => Some((c, h, w)),
        }
    }
}

/// Layers applied in order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

#[derive(Debug, Clone)]
pub struct SequentialCache(Vec<LayerCache>);

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    /// Forward pass that records caches for backpropagation. In [`Mode::Train`]
    /// batch-norm running statistics are updated.
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<(Tensor, SequentialCache)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let (y, cache, stats) = layer.forward(&h, mode).map_err(|e| annotate(e, i))?;
            if let (Layer::BatchNorm(bn), Some(stats)) = (&mut *layer, stats) {
                bn.apply_stats(&stats);
            }
            caches.push(cache);
            h = y;
        }
        Ok((h, SequentialCache(caches)))
    }

    /// Forward pass without side effects or caches.
    pub fn infer(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let mode = if mode == Mode::Train { Mode::BatchStats } else { mode };
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h, mode).map_err(|e| annotate(e, i))?.0;
        }
        Ok(h)
    }

    /// Backpropagates `grad` through the recorded pass, accumulating parameter
    /// gradients, and returns the gradient with respect to the input.
    pub fn backward(&mut self, cache: &SequentialCache, grad: &Tensor) -> Tensor {
        let mut g = grad.clone();
        for (layer, c) in self.layers.iter_mut().zip(cache.0.iter()).rev() {
            g = layer.backward(c, &g);
        }
        g
    }

    pub fn power_iterate(&mut self) {
        for layer in &mut self.layers {
            match layer {
                Layer::Conv(l) => l.power_iterate(),
                Layer::Dense(l) => l.power_iterate(),
                _ => {}
            }
        }
    }

    /// Propagates a (channels, height, width) shape through every layer.
    pub fn output_shape(&self, input: (usize, usize, usize)) -> Option<(usize, usize, usize)> {
        self.layers.iter().try_fold(input, |s, l| l.output_shape(s))
    }
}

fn annotate(e: Error, layer: usize) -> Error {
    match e {
        Error::Shape {
            tensor,
            expected,
            found,
        } => Error::Shape {
            tensor: format!("{tensor} (layer {layer})"),
            expected,
            found,
        },
        other => other,
    }
}

impl Module for Sequential {
    fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}
