use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment accumulators mirroring a list of parameter blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig, block_sizes: &[usize]) -> Self {
        Self {
            config,
            step: 0,
            m: block_sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: block_sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        self.m.iter().map(Vec::len).collect()
    }

    /// Bias-corrected ADAM update of every block in place.
    pub fn apply(&mut self, params: &mut [&mut [T]], grads: &[Vec<T>]) {
        assert_eq!(params.len(), self.m.len(), "parameter block count changed");
        assert_eq!(grads.len(), self.m.len(), "gradient block count differs");
        self.step += 1;
        let c = &self.config;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let bc1 = T::of(1.0 - c.beta1.powi(self.step as i32));
        let bc2 = T::of(1.0 - c.beta2.powi(self.step as i32));
        let lr = T::of(c.lr);
        let eps = T::of(c.eps);
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            assert_eq!(p.len(), g.len(), "gradient shape differs from parameter");
            for i in 0..p.len() {
                m[i] = b1 * m[i] + one_b1 * g[i];
                v[i] = b2 * v[i] + one_b2 * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}
