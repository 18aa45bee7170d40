//! Adam with bias correction.
//!
//! State is a flat list of first/second-moment tensors aligned with the
//! parameter list by index; callers are responsible for presenting
//! parameters in a stable order across steps.

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    pub cfg: AdamConfig,
    /// Completed step count; incremented before bias correction.
    pub t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    /// Zero-initialized moments matching `shapes`.
    pub fn new(cfg: AdamConfig, shapes: &[Vec<usize>]) -> Self {
        let m = shapes.iter().map(|s| Tensor::zeros(s.clone())).collect::<Vec<_>>();
        let v = m.clone();
        Self { cfg, t: 0, m, v }
    }

    /// One update over `(name, param)` pairs and their gradients.
    ///
    /// Rejects length/shape mismatches and non-finite gradients; the error
    /// names the offending parameter. Parameters are updated in place.
    pub fn step(&mut self, params: &mut [(&str, &mut Tensor)], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Contract(format!(
                "adam step arity mismatch: state {} params {} grads {}",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((name, p), g) in params.iter().zip(grads) {
            if !p.same_shape(g) {
                return Err(Error::Optimizer {
                    param: name.to_string(),
                    detail: format!("gradient shape {:?} != parameter shape {:?}", g.shape(), p.shape()),
                });
            }
            if !g.is_finite() {
                return Err(Error::Optimizer {
                    param: name.to_string(),
                    detail: "non-finite gradient".into(),
                });
            }
        }

        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for (idx, ((_, p), g)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.m[idx].data_mut();
            let v = self.v[idx].data_mut();
            let pd = p.data_mut();
            for ((pi, mi), (vi, gi)) in
                pd.iter_mut().zip(m.iter_mut()).zip(v.iter_mut().zip(g.data()))
            {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *pi -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
