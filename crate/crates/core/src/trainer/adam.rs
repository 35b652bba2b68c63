use alloc::vec::Vec;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr.is_finite()
            && self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(alloc::format!("bad Adam settings {self:?}")))
        }
    }
}

/// Adam with bias correction. Moments are kept per parameter tensor.
#[derive(Debug, Clone)]
pub struct Adam {
    pub cfg: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    pub fn new(cfg: AdamConfig, sizes: &[usize]) -> Self {
        Self {
            cfg,
            m: sizes.iter().map(|&n| alloc::vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| alloc::vec![0.0; n]).collect(),
            t: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    /// One update at learning rate `lr`. `lr_scale[p]` multiplies the rate of
    /// tensor `p`; a scale of zero freezes it (its moments still advance).
    pub fn step(
        &mut self,
        lr: f64,
        params: &mut [&mut [f64]],
        grads: &[&[f64]],
        lr_scale: &[f64],
    ) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() || lr_scale.len() != params.len() {
            return Err(Error::ShapeMismatch {
                op: "adam",
                detail: alloc::format!("{} tensors for {} slots", params.len(), self.m.len()),
            });
        }
        self.t += 1;
        let AdamConfig { beta1, beta2, eps, .. } = self.cfg;
        let c1 = 1.0 - libm::pow(beta1, self.t as f64);
        let c2 = 1.0 - libm::pow(beta2, self.t as f64);
        for (p, param) in params.iter_mut().enumerate() {
            let g = grads[p];
            if g.len() != param.len() || g.len() != self.m[p].len() {
                return Err(Error::ShapeMismatch {
                    op: "adam",
                    detail: alloc::format!("tensor {p}: {} grads for {} values", g.len(), param.len()),
                });
            }
            let rate = lr * lr_scale[p];
            for e in 0..g.len() {
                let m = &mut self.m[p][e];
                let v = &mut self.v[p][e];
                *m = beta1 * *m + (1.0 - beta1) * g[e];
                *v = beta2 * *v + (1.0 - beta2) * g[e] * g[e];
                if rate != 0.0 {
                    param[e] -= rate * (*m / c1) / (libm::sqrt(*v / c2) + eps);
                }
            }
        }
        Ok(())
    }
}
