//! Adam with decoupled learning rates for generator and discriminator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Scalar;

/// Two-timescale convention: beta1 = 0 and a discriminator rate 4x the
/// generator's are set at the training-options level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.0,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment buffers, one pair per parameter slice, in the same
/// order the model exposes its slices.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn for_slices(slices: &[&[T]]) -> Self {
        AdamState {
            m: slices.iter().map(|s| vec![T::zero(); s.len()]).collect(),
            v: slices.iter().map(|s| vec![T::zero(); s.len()]).collect(),
        }
    }

    /// One update with bias correction; `t` is the 1-based step count.
    pub fn step(
        &mut self,
        params: Vec<&mut [T]>,
        grads: Vec<&[T]>,
        cfg: &AdamConfig,
        t: u64,
    ) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Usage(format!(
                "adam: {} parameter and {} gradient slices for {} moment buffers",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        let b1 = T::from_f64(cfg.beta1);
        let b2 = T::from_f64(cfg.beta2);
        let one = T::one();
        let corr1 = T::from_f64(1.0 - cfg.beta1.powi(t as i32));
        let corr2 = T::from_f64(1.0 - cfg.beta2.powi(t as i32));
        let lr = T::from_f64(cfg.lr);
        let eps = T::from_f64(cfg.eps);
        for ((p, g), (m, v)) in params
            .into_iter()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            if p.len() != g.len() || p.len() != m.len() {
                return Err(Error::Usage("adam: slice length mismatch".into()));
            }
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                let mhat = m[i] / corr1;
                let vhat = v[i] / corr2;
                p[i] = p[i] - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
