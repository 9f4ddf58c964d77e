//! k-nearest-neighbour precision and recall for generative models.

use ndarray::{Array2, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub precision: f64,
    pub recall: f64,
    pub k: usize,
}

/// Squared Euclidean distance, summed in coordinate order.
pub fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        let d = x - y;
        s += d * d;
    }
    s
}

/// Squared distance from every point to its k-th nearest other point.
pub fn kth_neighbor_radii(points: &Array2<f64>, k: usize) -> Vec<f64> {
    let n = points.nrows();
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut d: Vec<f64> = (0..n)
                .filter(|&j| j != i)
                .map(|j| sq_dist(points.row(i), points.row(j)))
                .collect();
            *d.select_nth_unstable_by(k - 1, f64::total_cmp).1
        })
        .collect()
}

/// Index of the nearest row of `set` to `p` (smallest index on ties) and the squared distance.
pub fn nearest_index(set: &Array2<f64>, p: ArrayView1<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, row) in set.rows().into_iter().enumerate() {
        let d = sq_dist(p, row);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Fraction of `queries` whose nearest point of `support` lies within that
/// point's k-NN radius.
fn coverage(support: &Array2<f64>, radii: &[f64], queries: &Array2<f64>) -> f64 {
    let hits = (0..queries.nrows())
        .into_par_iter()
        .filter(|&i| {
            let (j, d) = nearest_index(support, queries.row(i));
            d <= radii[j]
        })
        .count();
    hits as f64 / queries.nrows() as f64
}

/// Precision: fraction of fake points inside the real manifold estimate.
/// Recall: fraction of real points inside the fake manifold estimate.
pub fn precision_recall(real: &Array2<f64>, fake: &Array2<f64>, k: usize) -> Result<PrPoint> {
    if k == 0 {
        return Err(Error::config("pr_k", "must be at least 1"));
    }
    if real.ncols() != fake.ncols() {
        return Err(Error::shape("fake embeddings", real.ncols(), fake.ncols()));
    }
    for (name, set) in [("real", real), ("fake", fake)] {
        if set.nrows() < k + 1 {
            return Err(Error::InvalidInput(format!(
                "{name} set has {} points; precision/recall with k = {k} needs at least {}",
                set.nrows(),
                k + 1
            )));
        }
    }
    let real_radii = kth_neighbor_radii(real, k);
    let fake_radii = kth_neighbor_radii(fake, k);
    Ok(PrPoint {
        precision: coverage(real, &real_radii, fake),
        recall: coverage(fake, &fake_radii, real),
        k,
    })
}
