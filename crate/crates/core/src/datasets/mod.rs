//! Indexed datasets: real image loaders, synthetic generators and a binary
//! container format.

mod format;
mod loaders;
mod source;
mod synthetic;

pub use format::{read_dataset, write_dataset, DATASET_MAGIC, DATASET_VERSION};
pub use loaders::{load_dataset, load_dataset_with, ExpectedSizes, CELEBA_CROP_DEFAULT};
pub use source::{DataSource, DATA_ROOT_ENV};
pub use synthetic::{make_synthetic, LinearGaussianParams, SyntheticKind, SyntheticSpec};

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::Tensor;

/// An ordered collection of equally shaped samples addressed by stable index.
///
/// Values are stored in raw units: `0..=pixel_max` for images, or the model
/// scale directly when the split has no pixel range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Samples {
    shape: (usize, usize, usize),
    pixel_max: Option<u32>,
    raw: Vec<f32>,
}

impl Samples {
    pub fn new(shape: (usize, usize, usize), pixel_max: Option<u32>, raw: Vec<f32>) -> Result<Self> {
        let dim = shape.0 * shape.1 * shape.2;
        if dim == 0 || !raw.len().is_multiple_of(dim) {
            return Err(Error::shape("sample buffer", format!("a multiple of {dim}"), raw.len()));
        }
        Ok(Self { shape, pixel_max, raw })
    }

    /// Builds image samples from 8-bit values.
    pub fn from_u8(shape: (usize, usize, usize), pixel_max: u32, bytes: &[u8]) -> Result<Self> {
        Self::new(shape, Some(pixel_max), bytes.iter().map(|&b| f32::from(b)).collect())
    }

    pub fn len(&self) -> usize {
        self.raw.len() / self.dim()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.shape.0 * self.shape.1 * self.shape.2
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.shape
    }

    pub fn pixel_max(&self) -> Option<u32> {
        self.pixel_max
    }

    pub fn raw(&self) -> &[f32] {
        &self.raw
    }

    pub fn raw_sample(&self, i: usize) -> &[f32] {
        let d = self.dim();
        &self.raw[i * d..(i + 1) * d]
    }

    fn normalize(&self, v: f32) -> f64 {
        match self.pixel_max {
            Some(m) => f64::from(v) / f64::from(m) * 2.0 - 1.0,
            None => f64::from(v),
        }
    }

    /// One sample in model scale (`[-1, 1]` for images).
    pub fn get(&self, i: usize) -> Array3<f64> {
        let (c, h, w) = self.shape;
        Array3::from_shape_vec((c, h, w), self.raw_sample(i).iter().map(|&v| self.normalize(v)).collect())
            .expect("sample size")
    }

    /// The samples at `indices` stacked as a (batch, c, h, w) tensor.
    pub fn batch(&self, indices: &[usize]) -> Tensor {
        let (c, h, w) = self.shape;
        let mut data = Vec::with_capacity(indices.len() * self.dim());
        for &i in indices {
            data.extend(self.raw_sample(i).iter().map(|&v| self.normalize(v)));
        }
        Tensor::from_shape_vec((indices.len(), c, h, w), data).expect("batch size")
    }

    /// Samples `start..end` as a tensor.
    pub fn range(&self, start: usize, end: usize) -> Tensor {
        self.batch(&(start..end).collect::<Vec<_>>())
    }

    /// All samples flattened to a (n, dim) matrix in model scale.
    pub fn matrix(&self) -> Array2<f64> {
        Array2::from_shape_vec((self.len(), self.dim()), self.raw.iter().map(|&v| self.normalize(v)).collect())
            .expect("sample matrix")
    }

    /// Iterates samples in index order.
    pub fn iter(&self) -> impl Iterator<Item = Array3<f64>> + '_ {
        (0..self.len()).map(|i| self.get(i))
    }

    /// Fingerprint of shape, range and contents.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!("{:?}{:?}", self.shape, self.pixel_max).as_bytes());
        for v in &self.raw {
            h.update(v.to_le_bytes());
        }
        hex(&h.finalize())
    }
}

/// Maps model-scale values back to raw units. Image values are rounded to the
/// nearest integer pixel and clamped to `0..=M`.
pub fn denormalize(x: f64, pixel_max: Option<u32>) -> f64 {
    match pixel_max {
        Some(m) => {
            let m = f64::from(m);
            ((x + 1.0) / 2.0 * m).round().clamp(0.0, m)
        }
        None => x,
    }
}

/// Maps model-scale values to the continuous `0..=M` scale without rounding.
pub fn to_pixel_scale(x: f64, pixel_max: u32) -> f64 {
    (x + 1.0) / 2.0 * f64::from(pixel_max)
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Train, validation and test splits of one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub name: String,
    pub train: Samples,
    pub validation: Samples,
    pub test: Samples,
    pub image_shape: (usize, usize, usize),
    pub pixel_max: Option<u32>,
    /// Per-training-sample group labels when the generator defines them
    /// (synthetic data: 0 = easy, 1 = hard).
    pub train_groups: Option<Vec<u8>>,
    /// True parameters of a linear-Gaussian synthetic dataset.
    pub linear_gaussian: Option<LinearGaussianParams>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Train,
    Validation,
    Test,
}

impl DatasetSplit {
    pub fn split(&self, which: SplitName) -> &Samples {
        match which {
            SplitName::Train => &self.train,
            SplitName::Validation => &self.validation,
            SplitName::Test => &self.test,
        }
    }

    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.name.as_bytes());
        for s in [&self.train, &self.validation, &self.test] {
            h.update(s.fingerprint().as_bytes());
        }
        hex(&h.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_round_trips_every_byte() {
        let bytes: Vec<u8> = (0..=255).collect();
        let s = Samples::from_u8((1, 16, 16), 255, &bytes).unwrap();
        let x = s.get(0);
        assert!(x.iter().all(|v| (-1.0..=1.0).contains(v)));
        for (v, b) in x.iter().zip(&bytes) {
            assert_eq!(denormalize(*v, Some(255)), f64::from(*b));
        }
    }

    #[test]
    fn batch_matches_get() {
        let bytes: Vec<u8> = (0..24).collect();
        let s = Samples::from_u8((2, 2, 2), 255, &bytes).unwrap();
        assert_eq!(s.len(), 3);
        let b = s.batch(&[2, 0]);
        assert_eq!(b.index_axis(ndarray::Axis(0), 0), s.get(2));
        assert_eq!(b.index_axis(ndarray::Axis(0), 1), s.get(0));
    }
}
