//! Adversarial, cycle-reconstruction and prior-norm loss terms.
//!
//! Every function returns the loss value together with its gradient with
//! respect to the direct inputs, so the trainer can backpropagate without a
//! separate autodiff pass.

use ndarray::{Array1, Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Smallest argument allowed inside a logarithm.
pub const LOG_CLAMP: f64 = 1e-12;

/// Form of the adversarial term minimized by the generator and encoder.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversarialForm {
    /// `-log σ(fake) - log(1 - σ(real))`.
    #[default]
    NonSaturating,
    /// The negated discriminator loss.
    Saturating,
}

/// Adversarial losses with gradients with respect to the logits.
#[derive(Debug, Clone, PartialEq)]
pub struct AdversarialLoss {
    pub l_d: f64,
    pub l_ge: f64,
    pub d_grad_real: Array1<f64>,
    pub d_grad_fake: Array1<f64>,
    pub ge_grad_real: Array1<f64>,
    pub ge_grad_fake: Array1<f64>,
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `-log(max(σ(x), 1e-12))` and its derivative in `x`.
fn neg_log_sigmoid(x: f64) -> (f64, f64) {
    let cap = -LOG_CLAMP.ln();
    let v = softplus(-x);
    if v >= cap {
        (cap, 0.0)
    } else {
        (v, sigmoid(x) - 1.0)
    }
}

/// `-log(max(1 - σ(x), 1e-12))` and its derivative in `x`.
fn neg_log_one_minus_sigmoid(x: f64) -> (f64, f64) {
    let (v, d) = neg_log_sigmoid(-x);
    (v, -d)
}

fn mean_term(xs: &Array1<f64>, f: fn(f64) -> (f64, f64)) -> (f64, Array1<f64>) {
    let n = xs.len() as f64;
    let mut total = 0.0;
    let grad = xs.mapv(|x| {
        let (v, d) = f(x);
        total += v;
        d / n
    });
    (total / n, grad)
}

/// Discriminator loss `-mean log σ(real) - mean log(1 - σ(fake))` and the
/// generator/encoder loss of the requested form.
pub fn adversarial_loss(logits_real: &Array1<f64>, logits_fake: &Array1<f64>, form: AdversarialForm) -> Result<AdversarialLoss> {
    if logits_real.is_empty() || logits_fake.is_empty() {
        return Err(Error::InvalidInput("adversarial loss needs non-empty logit batches".into()));
    }
    if logits_real.len() != logits_fake.len() {
        return Err(Error::shape("logits_fake", logits_real.len(), logits_fake.len()));
    }
    if logits_real.iter().chain(logits_fake).any(|v| v.is_nan()) {
        return Err(Error::non_finite("discriminator logits"));
    }
    let (dr, d_grad_real) = mean_term(logits_real, neg_log_sigmoid);
    let (df, d_grad_fake) = mean_term(logits_fake, neg_log_one_minus_sigmoid);
    let l_d = dr + df;
    let (l_ge, ge_grad_real, ge_grad_fake) = match form {
        AdversarialForm::NonSaturating => {
            let (gf, g_fake) = mean_term(logits_fake, neg_log_sigmoid);
            let (gr, g_real) = mean_term(logits_real, neg_log_one_minus_sigmoid);
            (gf + gr, g_real, g_fake)
        }
        AdversarialForm::Saturating => (-l_d, -&d_grad_real, -&d_grad_fake),
    };
    Ok(AdversarialLoss {
        l_d,
        l_ge,
        d_grad_real,
        d_grad_fake,
        ge_grad_real,
        ge_grad_fake,
    })
}

/// Batch mean of per-sample mean squared errors, with the gradient with
/// respect to `x_rec`.
pub fn cycle_loss(x: &Tensor, x_rec: &Tensor) -> Result<(f64, Tensor)> {
    if x.shape() != x_rec.shape() {
        return Err(Error::shape("x_rec", x.shape(), x_rec.shape()));
    }
    if x.is_empty() {
        return Err(Error::InvalidInput("cycle loss needs a non-empty batch".into()));
    }
    // every sample has the same entry count, so the batch mean of per-sample
    // means is the mean over all entries
    let n = x.len() as f64;
    let mut sse = 0.0;
    let mut grad = Tensor::zeros(x.raw_dim());
    Zip::from(&mut grad).and(x).and(x_rec).for_each(|g, &a, &b| {
        let d = b - a;
        sse += d * d;
        *g = 2.0 * d / n;
    });
    Ok((sse / n, grad))
}

/// `mean_i (‖z_i‖ - √D)²` with its gradient with respect to `z_enc`.
/// At `z_i = 0` the subgradient zero is used.
pub fn norm_loss(z_enc: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
    let (n, d) = z_enc.dim();
    if d == 0 {
        return Err(Error::InvalidInput("norm loss needs a latent width of at least 1".into()));
    }
    if n == 0 {
        return Err(Error::InvalidInput("norm loss needs a non-empty batch".into()));
    }
    let target = (d as f64).sqrt();
    let mut total = 0.0;
    let mut grad = Array2::zeros((n, d));
    for (row, mut g) in z_enc.rows().into_iter().zip(grad.rows_mut()) {
        let norm = row.dot(&row).sqrt();
        let diff = norm - target;
        total += diff * diff;
        if norm > 0.0 {
            let scale = 2.0 * diff / (norm * n as f64);
            g.zip_mut_with(&row, |g, &z| *g = scale * z);
        }
    }
    Ok((total / n as f64, grad))
}

/// L2 norm of every row.
pub fn row_norms(z: &Array2<f64>) -> Vec<f64> {
    z.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect()
}

/// All loss terms of one update together with the weights used.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_adv_d: f64,
    pub l_adv_ge: f64,
    pub l_cyc: f64,
    pub l_norm: f64,
    pub lambda_cyc: f64,
    pub lambda_norm: f64,
    pub total_ge: f64,
    pub total_d: f64,
}

/// Weighted sum `l_ge + λ_cyc·l_cyc + λ_norm·l_norm`.
pub fn combine(l_adv_d: f64, l_adv_ge: f64, l_cyc: f64, l_norm: f64, lambda_cyc: f64, lambda_norm: f64) -> Result<LossBreakdown> {
    for (name, v) in [("lambda_cyc", lambda_cyc), ("lambda_norm", lambda_norm)] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::config(name, format!("must be a finite non-negative number, got {v}")));
        }
    }
    Ok(LossBreakdown {
        l_adv_d,
        l_adv_ge,
        l_cyc,
        l_norm,
        lambda_cyc,
        lambda_norm,
        total_ge: l_adv_ge + lambda_cyc * l_cyc + lambda_norm * l_norm,
        total_d: l_adv_d,
    })
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.l_adv_d, self.l_adv_ge, self.l_cyc, self.l_norm, self.total_ge, self.total_d]
            .iter()
            .all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, arr2, Array4};

    #[test]
    fn zero_logits_give_two_log_two() {
        let z = arr1(&[0.0, 0.0, 0.0]);
        let l = adversarial_loss(&z, &z, AdversarialForm::NonSaturating).unwrap();
        assert!((l.l_d - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert!((l.l_ge - 2.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn perfect_discriminator_limit() {
        let l = adversarial_loss(&arr1(&[60.0]), &arr1(&[-60.0]), AdversarialForm::NonSaturating).unwrap();
        assert!(l.l_d < 1e-20);
        let extreme = adversarial_loss(&arr1(&[-1e6]), &arr1(&[1e6]), AdversarialForm::Saturating).unwrap();
        assert!(extreme.l_d.is_finite());
        assert!((extreme.l_d + 2.0 * LOG_CLAMP.ln()).abs() < 1e-9);
        assert_eq!(extreme.l_ge, -extreme.l_d);
    }

    #[test]
    fn rejects_bad_batches() {
        assert!(adversarial_loss(&arr1(&[]), &arr1(&[]), AdversarialForm::NonSaturating).is_err());
        assert!(adversarial_loss(&arr1(&[1.0]), &arr1(&[1.0, 2.0]), AdversarialForm::NonSaturating).is_err());
    }

    #[test]
    fn cycle_examples() {
        let x = Array4::zeros((2, 3, 2, 2));
        let half = Array4::from_elem((2, 3, 2, 2), 0.5);
        assert_eq!(cycle_loss(&x, &x).unwrap().0, 0.0);
        assert!((cycle_loss(&x, &half).unwrap().0 - 0.25).abs() < 1e-15);
        let mut mixed = Array4::zeros((2, 1, 1, 2));
        mixed[[1, 0, 0, 0]] = 1.0;
        // per-sample MSE 0 and 0.5
        assert!((cycle_loss(&Array4::zeros((2, 1, 1, 2)), &mixed).unwrap().0 - 0.25).abs() < 1e-15);
        assert!(cycle_loss(&x, &Array4::zeros((2, 3, 2, 1))).is_err());
    }

    #[test]
    fn norm_examples() {
        let mut z = Array2::zeros((1, 4));
        z[[0, 0]] = 3.0;
        assert!((norm_loss(&z).unwrap().0 - 1.0).abs() < 1e-15);
        let mut z = Array2::zeros((2, 256));
        z[[0, 0]] = 16.0;
        z[[1, 5]] = 18.0;
        assert!((norm_loss(&z).unwrap().0 - 2.0).abs() < 1e-12);
        assert!(norm_loss(&Array2::zeros((3, 0))).is_err());
        assert_eq!(norm_loss(&arr2(&[[0.0, 0.0]])).unwrap().1, arr2(&[[0.0, 0.0]]));
    }

    #[test]
    fn combine_examples() {
        assert_eq!(combine(0.0, 1.0, 2.0, 3.0, 0.0, 0.0).unwrap().total_ge, 1.0);
        assert_eq!(combine(0.0, 1.0, 2.0, 3.0, 8.0, 0.0).unwrap().total_ge, 17.0);
        assert!((combine(0.0, 1.0, 2.0, 3.0, 3.0, 0.01).unwrap().total_ge - 7.03).abs() < 1e-12);
        assert!(combine(0.0, 1.0, 2.0, 3.0, -1.0, 0.0).unwrap_err().is_config());
    }
}
