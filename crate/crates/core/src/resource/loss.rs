use alloc::format;
use alloc::vec::Vec;

use super::ebops::{bitwidth_sum, ebops_surrogate_value, partials};
use crate::autodiff::{Tape, Var};
use crate::qlayers::{Bindings, QModel};
use crate::{Error, Result};

/// Coefficients of the regularized loss
/// `base + beta(step) * EBOPs + gamma * sum(bit-widths)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub beta_init: f64,
    pub beta_final: f64,
    pub gamma: f64,
    /// Step at which beta reaches `beta_final`.
    pub total_steps: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            beta_init: 5e-7,
            beta_final: 1e-3,
            gamma: 2e-8,
            total_steps: 1,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.beta_init) || !ok(self.beta_final) || !ok(self.gamma) {
            return Err(Error::InvalidConfig(format!(
                "loss coefficients must be finite and non-negative: {self:?}"
            )));
        }
        if self.beta_final < self.beta_init {
            return Err(Error::InvalidConfig("beta_final < beta_init".into()));
        }
        if self.beta_init == 0.0 && self.beta_final > 0.0 {
            return Err(Error::InvalidConfig(
                "exponential beta schedule needs beta_init > 0".into(),
            ));
        }
        Ok(())
    }

    /// `beta_init * (beta_final / beta_init)^(t / T)`, held at `beta_final`
    /// after step `T`.
    pub fn beta_at(&self, step: usize) -> f64 {
        if self.beta_init == self.beta_final || self.total_steps == 0 {
            return if step == 0 && self.total_steps > 0 { self.beta_init } else { self.beta_final };
        }
        if step >= self.total_steps {
            return self.beta_final;
        }
        let t = step as f64 / self.total_steps as f64;
        self.beta_init * libm::exp(t * libm::log(self.beta_final / self.beta_init))
    }
}

/// `sum(bit-widths)` over every quantizer group, recorded on `tape`.
pub fn bitwidth_l1(tape: &mut Tape, model: &QModel, bindings: &Bindings) -> Result<Var> {
    let s = bitwidth_sum(model)?;
    tape.custom_scalar(s.value, partials(model, bindings, s.grads, 1.0))
}

/// Adds the EBOPs and bit-width regularizers to `base`. Both terms reach
/// only the bit-width leaves, so weight gradients are left untouched.
pub fn total_loss(
    tape: &mut Tape,
    base: Var,
    model: &QModel,
    bindings: &Bindings,
    cfg: &LossConfig,
    step: usize,
) -> Result<Var> {
    let beta = cfg.beta_at(step);
    let gamma = cfg.gamma;
    if beta == 0.0 && gamma == 0.0 {
        return Ok(base);
    }
    let mut value = 0.0;
    let mut parts: Vec<(Var, Vec<f64>)> = Vec::new();
    if beta > 0.0 {
        let e = ebops_surrogate_value(model)?;
        value += beta * e.value;
        parts.extend(partials(model, bindings, e.grads, beta));
    }
    if gamma > 0.0 {
        let b = bitwidth_sum(model)?;
        value += gamma * b.value;
        parts.extend(partials(model, bindings, b.grads, gamma));
    }
    let reg = tape.custom_scalar(value, parts)?;
    tape.add(base, reg)
}
