use nalgebra::{DMatrix, DVector};
use ndarray::Array2;

use crate::error::{Error, Result};

fn moments(x: &Array2<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let (n, d) = x.dim();
    let m = DMatrix::from_row_iterator(n, d, x.iter().copied());
    let mean = DVector::from_iterator(d, (0..d).map(|j| m.column(j).sum() / n as f64));
    let mut centered = m;
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    (mean, cov)
}

/// Symmetric PSD square root with negative eigenvalues clamped to zero.
fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// Fréchet distance between Gaussian fits of two embedding sets (rows are points).
pub fn fid(real: &Array2<f64>, fake: &Array2<f64>) -> Result<f64> {
    if real.ncols() != fake.ncols() {
        return Err(Error::shape("fake embeddings", real.ncols(), fake.ncols()));
    }
    for (name, set) in [("real", real), ("fake", fake)] {
        if set.nrows() < 2 {
            return Err(Error::InvalidInput(format!("{name} embedding set needs at least 2 points")));
        }
        if set.iter().any(|v| !v.is_finite()) {
            return Err(Error::non_finite(format!("{name} embeddings")));
        }
        if set.nrows() < set.ncols() + 1 {
            log::warn!(
                "{name} embedding set has {} points for dimension {}; covariance is rank deficient",
                set.nrows(),
                set.ncols()
            );
        }
    }
    let (mu_r, cov_r) = moments(real);
    let (mu_f, cov_f) = moments(fake);
    Ok(fid_matrices(&mu_r, &cov_r, &mu_f, &cov_f))
}

/// `‖μr − μf‖² + Tr(Σr + Σf − 2(Σr Σf)^{1/2})`, evaluated through the
/// symmetric product `Σr^{1/2} Σf Σr^{1/2}`; clamped at zero.
pub fn fid_matrices(mu_r: &DVector<f64>, cov_r: &DMatrix<f64>, mu_f: &DVector<f64>, cov_f: &DMatrix<f64>) -> f64 {
    let diff = (mu_r - mu_f).norm_squared();
    let s = sqrt_psd(cov_r);
    let inner = &s * cov_f * &s;
    let sym = (&inner + inner.transpose()) * 0.5;
    let tr_sqrt: f64 = sym.symmetric_eigenvalues().iter().map(|v| v.max(0.0).sqrt()).sum();
    (diff + cov_r.trace() + cov_f.trace() - 2.0 * tr_sqrt).max(0.0)
}
