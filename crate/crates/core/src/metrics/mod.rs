//! Reconstruction and sample-quality metrics.

mod embed;
mod fid;
mod pr;

pub use embed::{Embedder, EmbeddingConfig, EmbeddingSet, EmbeddingSource, MlpLayer, MlpModel, PcaModel};
pub use fid::{fid, fid_matrices};
pub use pr::{kth_neighbor_radii, nearest_index, precision_recall, sq_dist, PrPoint};

use ndarray::ArrayView1;

use crate::datasets::to_pixel_scale;
use crate::error::{Error, Result};
use crate::nn::{flatten, Tensor};

/// Value reported in tables in place of an infinite PSNR.
pub const PSNR_CAP: f64 = 100.0;

/// `10·log10(n·M² / SSE)` for images in the `0..=M` pixel scale, where `n` is
/// the number of entries. Identical images give `+∞`.
pub fn psnr(x: &[f64], x_rec: &[f64], pixel_max: f64) -> Result<f64> {
    if x.len() != x_rec.len() {
        return Err(Error::shape("x_rec", x.len(), x_rec.len()));
    }
    if x.is_empty() {
        return Err(Error::InvalidInput("psnr needs non-empty images".into()));
    }
    let sse: f64 = x.iter().zip(x_rec).map(|(a, b)| (a - b) * (a - b)).sum();
    if sse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (x.len() as f64 * pixel_max * pixel_max / sse).log10())
}

/// PSNR of model-scale (`[-1, 1]`) images, converted to `0..=M` first.
pub fn psnr_model_scale(x: ArrayView1<f64>, x_rec: ArrayView1<f64>, pixel_max: u32) -> Result<f64> {
    let a: Vec<f64> = x.iter().map(|&v| to_pixel_scale(v, pixel_max)).collect();
    let b: Vec<f64> = x_rec.iter().map(|&v| to_pixel_scale(v, pixel_max)).collect();
    psnr(&a, &b, f64::from(pixel_max))
}

/// [`psnr_model_scale`] with infinity replaced by [`PSNR_CAP`].
pub fn psnr_capped(x: ArrayView1<f64>, x_rec: ArrayView1<f64>, pixel_max: u32) -> Result<f64> {
    Ok(psnr_model_scale(x, x_rec, pixel_max)?.min(PSNR_CAP))
}

/// Capped per-sample PSNR of two model-scale batches.
pub fn psnr_batch(x: &Tensor, x_rec: &Tensor, pixel_max: u32) -> Result<Vec<f64>> {
    if x.shape() != x_rec.shape() {
        return Err(Error::shape("x_rec", x.shape(), x_rec.shape()));
    }
    let a = flatten(x);
    let b = flatten(x_rec);
    a.rows()
        .into_iter()
        .zip(b.rows())
        .map(|(r, s)| psnr_capped(r, s, pixel_max))
        .collect()
}
