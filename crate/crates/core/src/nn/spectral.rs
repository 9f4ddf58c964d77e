use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

const EPS: f64 = 1e-12;

fn normalized(v: Array1<f64>) -> Array1<f64> {
    let n = v.dot(&v).sqrt();
    v / (n + EPS)
}

/// Persistent left singular vector estimate for spectral normalization.
///
/// The largest singular value of a weight matrix `W` (rows = output units) is
/// estimated as `sigma = ||W^T u||` with `v = W^T u / sigma`, so `sigma = u^T W v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralNorm {
    pub u: Array1<f64>,
}

impl SpectralNorm {
    pub fn new<R: Rng>(rows: usize, rng: &mut R) -> Self {
        let u = Array1::from_shape_fn(rows, |_| StandardNormal.sample(rng));
        Self { u: normalized(u) }
    }

    pub fn power_iterate(&mut self, w: &ArrayView2<f64>) {
        let v = normalized(w.t().dot(&self.u));
        self.u = normalized(w.dot(&v));
    }

    pub fn converge(&mut self, w: &ArrayView2<f64>, iterations: usize) {
        for _ in 0..iterations {
            self.power_iterate(w);
        }
    }

    /// Current estimate of the spectral norm and the matching right vector.
    pub fn sigma(&self, w: &ArrayView2<f64>) -> (f64, Array1<f64>) {
        let wtu = w.t().dot(&self.u);
        let sigma = wtu.dot(&wtu).sqrt().max(EPS);
        (sigma, wtu / sigma)
    }

    /// Gradient with respect to the raw weight given the gradient with respect
    /// to the normalized weight `W / sigma`, holding `u` fixed.
    pub fn backward(
        &self,
        w: &ArrayView2<f64>,
        grad_eff: &ArrayView2<f64>,
        sigma: f64,
        v: &Array1<f64>,
    ) -> Array2<f64> {
        let inner = (grad_eff * w).sum();
        let outer = self
            .u
            .view()
            .insert_axis(ndarray::Axis(1))
            .dot(&v.view().insert_axis(ndarray::Axis(0)));
        grad_eff / sigma - outer * (inner / (sigma * sigma))
    }
}

/// Largest singular value of `w` by many power iterations from a fixed start.
pub fn spectral_norm_estimate(w: &ArrayView2<f64>, iterations: usize) -> f64 {
    let mut v = normalized(Array1::from_shape_fn(w.ncols(), |i| 1.0 + (i as f64 * 0.618).sin()));
    let mut sigma = 0.0;
    for _ in 0..iterations {
        let u = w.dot(&v);
        sigma = u.dot(&u).sqrt();
        v = normalized(w.t().dot(&u));
    }
    sigma
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn converges_to_largest_singular_value() {
        let w = array![[3.0, 0.0], [0.0, 1.0], [0.0, 0.0]];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut sn = SpectralNorm::new(3, &mut rng);
        sn.converge(&w.view(), 30);
        let (sigma, _) = sn.sigma(&w.view());
        assert!((sigma - 3.0).abs() < 1e-9);
        assert!((spectral_norm_estimate(&w.view(), 50) - 3.0).abs() < 1e-9);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = Array2::from_shape_fn((3, 4), |_| StandardNormal.sample(&mut rng));
        let g = Array2::from_shape_fn((3, 4), |_| StandardNormal.sample(&mut rng));
        let sn = SpectralNorm::new(3, &mut rng);
        let loss = |w: &Array2<f64>| {
            let (s, _) = sn.sigma(&w.view());
            (w / s * &g).sum()
        };
        let (s, v) = sn.sigma(&w.view());
        let analytic = sn.backward(&w.view(), &g.view(), s, &v);
        let h = 1e-6;
        for i in 0..3 {
            for j in 0..4 {
                let mut wp = w.clone();
                wp[[i, j]] += h;
                let mut wm = w.clone();
                wm[[i, j]] -= h;
                let fd = (loss(&wp) - loss(&wm)) / (2.0 * h);
                assert!((fd - analytic[[i, j]]).abs() < 1e-6 * (1.0 + fd.abs()));
            }
        }
    }
}
