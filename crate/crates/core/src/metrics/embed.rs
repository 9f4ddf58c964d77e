//! Feature embeddings for FID and precision/recall.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingSource {
    RawPca,
    ExternalModelFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EmbeddingConfig {
    RawPca { d: usize, seed: u64 },
    ExternalModelFile { path: PathBuf },
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self::RawPca { d: 64, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub vectors: Array2<f64>,
    pub source: EmbeddingSource,
    pub d: usize,
}

/// Principal-component projection fitted on a reference set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Array1<f64>,
    /// (d, raw_dim), orthonormal rows.
    pub components: Array2<f64>,
    /// Fraction of the reference set's variance captured by the components.
    pub explained_variance_ratio: f64,
}

const OVERSAMPLE: usize = 10;
const POWER_ITERS: usize = 6;

fn orthonormalize(m: &Array2<f64>) -> Array2<f64> {
    let (r, c) = m.dim();
    let q = DMatrix::from_row_iterator(r, c, m.iter().copied()).qr().q();
    Array2::from_shape_fn((r, c), |(i, j)| q[(i, j)])
}

impl PcaModel {
    /// Fits `d` components by randomized subspace iteration followed by a
    /// Rayleigh-Ritz step. Deterministic given `seed`.
    pub fn fit(data: &Array2<f64>, d: usize, seed: u64) -> Result<Self> {
        let (n, dim) = data.dim();
        if d == 0 || d > dim {
            return Err(Error::config(
                "embedding.d",
                format!("must lie in 1..={dim} (the raw dimension), got {d}"),
            ));
        }
        if n < 2 {
            return Err(Error::InvalidInput("PCA needs at least 2 reference points".into()));
        }
        let mean = data.mean_axis(Axis(0)).expect("non-empty");
        let xc = data - &mean;
        let l = (d + OVERSAMPLE).min(dim);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut basis = orthonormalize(&Array2::from_shape_simple_fn((dim, l), || StandardNormal.sample(&mut rng)));
        for _ in 0..POWER_ITERS {
            basis = orthonormalize(&xc.t().dot(&xc.dot(&basis)));
        }
        let b = xc.dot(&basis);
        let small = b.t().dot(&b);
        let eig = DMatrix::from_row_iterator(l, l, small.iter().copied()).symmetric_eigen();
        let mut order: Vec<usize> = (0..l).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let mut components = Array2::zeros((d, dim));
        for (row, &o) in order.iter().take(d).enumerate() {
            let v = Array1::from_shape_fn(l, |i| eig.eigenvectors[(i, o)]);
            let mut c = basis.dot(&v);
            let pivot = c.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            if pivot < 0.0 {
                c.mapv_inplace(|x| -x);
            }
            components.row_mut(row).assign(&c);
        }
        let total: f64 = xc.iter().map(|v| v * v).sum();
        let captured: f64 = order.iter().take(d).map(|&o| eig.eigenvalues[o].max(0.0)).sum();
        Ok(Self {
            mean,
            components,
            explained_variance_ratio: if total > 0.0 { captured / total } else { 1.0 },
        })
    }

    pub fn project(&self, data: &Array2<f64>) -> Result<Array2<f64>> {
        if data.ncols() != self.mean.len() {
            return Err(Error::shape("embedding input", self.mean.len(), data.ncols()));
        }
        Ok((data - &self.mean).dot(&self.components.t()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MlpActivation {
    Linear,
    Relu,
    Tanh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpLayer {
    /// (outputs, inputs), row-major.
    pub weight: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub activation: MlpActivation,
}

/// A feed-forward feature extractor loaded from JSON (`{"layers": [...]}`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpModel {
    pub layers: Vec<MlpLayer>,
}

impl MlpModel {
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile { path: path.to_path_buf() });
        }
        let model: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if model.layers.is_empty() {
            return Err(Error::format("feature extractor", "no layers"));
        }
        for (i, l) in model.layers.iter().enumerate() {
            let inputs = l.weight.first().map_or(0, Vec::len);
            if l.weight.len() != l.bias.len() || l.weight.iter().any(|r| r.len() != inputs) {
                return Err(Error::format("feature extractor", format!("layer {i} has inconsistent sizes")));
            }
        }
        Ok(model)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.bias.len())
    }

    pub fn apply(&self, data: &Array2<f64>) -> Result<Array2<f64>> {
        let mut h = data.clone();
        for (i, l) in self.layers.iter().enumerate() {
            let (o, inp) = (l.weight.len(), l.weight[0].len());
            if h.ncols() != inp {
                return Err(Error::shape(format!("feature extractor layer {i} input"), inp, h.ncols()));
            }
            let w = Array2::from_shape_vec((o, inp), l.weight.concat()).expect("validated sizes");
            h = h.dot(&w.t()) + &Array1::from(l.bias.clone());
            match l.activation {
                MlpActivation::Linear => {}
                MlpActivation::Relu => h.mapv_inplace(|v| v.max(0.0)),
                MlpActivation::Tanh => h.mapv_inplace(f64::tanh),
            }
        }
        Ok(h)
    }
}

/// A fitted embedding.
#[derive(Debug, Clone, PartialEq)]
pub enum Embedder {
    Pca(PcaModel),
    Mlp(MlpModel),
}

impl Embedder {
    /// Fits on (or loads for) the flattened real reference set.
    pub fn fit(config: &EmbeddingConfig, reference: &Array2<f64>) -> Result<Self> {
        match config {
            EmbeddingConfig::RawPca { d, seed } => Ok(Self::Pca(PcaModel::fit(reference, *d, *seed)?)),
            EmbeddingConfig::ExternalModelFile { path } => Ok(Self::Mlp(MlpModel::load(path)?)),
        }
    }

    pub fn embed(&self, data: &Array2<f64>) -> Result<EmbeddingSet> {
        let (vectors, source) = match self {
            Self::Pca(p) => (p.project(data)?, EmbeddingSource::RawPca),
            Self::Mlp(m) => (m.apply(data)?, EmbeddingSource::ExternalModelFile),
        };
        if vectors.iter().any(|v| v.is_nan()) {
            return Err(Error::non_finite("embedding vectors"));
        }
        let d = vectors.ncols();
        Ok(EmbeddingSet { vectors, source, d })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data() -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // strongly anisotropic: variances 100, 25, 1, 0.01, 0.01
        let scales = [10.0, 5.0, 1.0, 0.1, 0.1];
        Array2::from_shape_fn((400, 5), |(_, j)| {
            let v: f64 = StandardNormal.sample(&mut rng);
            v * scales[j]
        })
    }

    #[test]
    fn recovers_leading_axes() {
        let p = PcaModel::fit(&data(), 2, 0).unwrap();
        assert!(p.components[[0, 0]] > 0.999);
        assert!(p.components[[1, 1]] > 0.999);
        assert!(p.explained_variance_ratio > 0.98);
        let full = PcaModel::fit(&data(), 5, 0).unwrap();
        assert!((full.explained_variance_ratio - 1.0).abs() < 1e-9);
    }

    #[test]
    fn deterministic_and_bounded() {
        assert_eq!(PcaModel::fit(&data(), 3, 5).unwrap(), PcaModel::fit(&data(), 3, 5).unwrap());
        assert!(PcaModel::fit(&data(), 6, 0).unwrap_err().is_config());
    }

    #[test]
    fn missing_model_file_names_path() {
        let err = MlpModel::load(Path::new("/nonexistent/extractor.json")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/extractor.json"));
    }
}
