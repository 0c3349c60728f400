use serde::{Deserialize, Serialize};

use super::graph::ParamSet;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam moments for one [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &ParamSet) -> Self {
        let zeros = || params.values.iter().map(|t| Tensor::zeros(t.rows, t.cols)).collect();
        AdamState {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// Applies one update from `params.grads`. Gradients are left in place.
    pub fn update(&mut self, params: &mut ParamSet) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::Dimension(format!(
                "optimizer tracks {} tensors, parameter set has {}",
                self.m.len(),
                params.len()
            )));
        }
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        self.step += 1;
        let bc1 = 1.0 - beta1.powf(self.step as f64);
        let bc2 = 1.0 - beta2.powf(self.step as f64);
        for (k, (w, g)) in params.values.iter_mut().zip(&params.grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..w.data.len() {
                let gi = g.data[i];
                m.data[i] = beta1 * m.data[i] + (1.0 - beta1) * gi;
                v.data[i] = beta2 * v.data[i] + (1.0 - beta2) * gi * gi;
                let mh = m.data[i] / bc1;
                let vh = v.data[i] / bc2;
                w.data[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(values: Vec<f64>) -> ParamSet {
        let mut ps = ParamSet::new(0);
        let n = values.len();
        ps.push("w", Tensor::from_vec(1, n, values));
        ps
    }

    #[test]
    fn zero_gradient_is_noop() {
        let mut ps = one(vec![1.0, -2.0]);
        let mut opt = AdamState::new(AdamConfig::default(), &ps);
        opt.update(&mut ps).unwrap();
        assert_eq!(ps.values[0].data, vec![1.0, -2.0]);
    }

    #[test]
    fn first_step_moves_by_lr_against_sign() {
        let mut ps = one(vec![0.0, 0.0, 0.0]);
        ps.grads[0].data = vec![5.0, -0.01, 1e3];
        let cfg = AdamConfig::default();
        let mut opt = AdamState::new(cfg, &ps);
        opt.update(&mut ps).unwrap();
        for (w, g) in ps.values[0].data.iter().zip(&ps.grads[0].data) {
            assert!((w + cfg.lr * g.signum()).abs() < 1e-9);
        }
    }

    #[test]
    fn converges_on_quadratic_bowl() {
        let target = [3.0, -1.5, 0.25];
        let mut ps = one(vec![0.0; 3]);
        let mut opt = AdamState::new(
            AdamConfig {
                lr: 0.01,
                ..AdamConfig::default()
            },
            &ps,
        );
        for _ in 0..5000 {
            let w = &ps.values[0].data;
            ps.grads[0].data = w.iter().zip(&target).map(|(w, t)| 2.0 * (w - t)).collect();
            opt.update(&mut ps).unwrap();
        }
        let loss: f64 = ps.values[0].data.iter().zip(&target).map(|(w, t)| (w - t).powi(2)).sum();
        assert!(loss < 1e-6, "loss {loss}");
    }
}
