use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use super::Param;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for one parameter list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<ArrayD<f64>>,
    pub v: Vec<ArrayD<f64>>,
}

/// Adam with bias correction; the learning rate is supplied per step so a
/// schedule can drive it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    pub state: AdamState,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &[&Param]) -> Self {
        let m: Vec<_> = params.iter().map(|p| ArrayD::zeros(p.value.raw_dim())).collect();
        Self {
            config,
            state: AdamState {
                step: 0,
                v: m.clone(),
                m,
            },
        }
    }

    pub fn step(&mut self, params: Vec<&mut Param>, lr: f64) {
        assert_eq!(params.len(), self.state.m.len(), "parameter list changed");
        self.state.step += 1;
        let t = self.state.step as i32;
        let AdamConfig { beta1, beta2, eps, .. } = self.config;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for ((p, m), v) in params.into_iter().zip(&mut self.state.m).zip(&mut self.state.v) {
            if !p.has_grad() {
                continue;
            }
            let g = p.grad();
            m.zip_mut_with(&g, |m, &g| *m = beta1 * *m + (1.0 - beta1) * g);
            v.zip_mut_with(&g, |v, &g| *v = beta2 * *v + (1.0 - beta2) * g * g);
            ndarray::Zip::from(&mut p.value).and(&*m).and(&*v).for_each(|w, &m, &v| {
                *w -= lr * (m / bc1) / ((v / bc2).sqrt() + eps);
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr1;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = Param::new(arr1(&[1.0, -1.0]).into_dyn());
        let mut adam = Adam::new(AdamConfig::default(), &[&p]);
        p.accumulate(arr1(&[0.5, -3.0]).into_dyn().view());
        adam.step(vec![&mut p], 0.1);
        // bias-corrected first step is lr * sign(g)
        assert!((p.value[[0]] - 0.9).abs() < 1e-6);
        assert!((p.value[[1]] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = Param::new(arr1(&[5.0]).into_dyn());
        let mut adam = Adam::new(AdamConfig { beta1: 0.9, ..Default::default() }, &[&p]);
        for _ in 0..2000 {
            p.zero_grad();
            let g = p.value.mapv(|w| 2.0 * (w - 2.0));
            p.accumulate(g.view());
            adam.step(vec![&mut p], 0.05);
        }
        assert!((p.value[[0]] - 2.0).abs() < 1e-3);
    }
}
