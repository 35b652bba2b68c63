use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::LN_2;

use super::format::{round_half_up, FixedPointFormat, OverflowMode, RoundMode};
use crate::{Error, Result};

/// How elements of a parameter tensor share bit-widths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Granularity {
    PerTensor,
    /// One group per index of the last axis.
    PerChannel,
    PerParameter,
}

/// Learnable bit-width state for one quantized tensor.
///
/// `param_shape` excludes the batch axis: activations of width `n` use
/// `[n]` and a batch of them is processed row by row.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizerState {
    pub granularity: Granularity,
    pub param_shape: Vec<usize>,
    pub f_cont: Vec<f64>,
    /// Only trained under SAT. WRAP groups get `i` from calibration.
    pub i_cont: Vec<f64>,
    pub signed: Vec<bool>,
    pub running_max_abs: Vec<f64>,
    pub stats_populated: bool,
    pub round: RoundMode,
    pub overflow: OverflowMode,
    /// Frozen quantizers (e.g. the network input) receive no bit-width updates.
    pub trainable: bool,
    /// Use the continuous `i_cont` for SAT clip bounds instead of its rounded value.
    pub sat_continuous_i: bool,
}

impl QuantizerState {
    pub fn new(
        granularity: Granularity,
        param_shape: &[usize],
        signed: bool,
        round: RoundMode,
        overflow: OverflowMode,
        f_init: f64,
        i_init: f64,
    ) -> Self {
        let groups = group_count(granularity, param_shape);
        Self {
            granularity,
            param_shape: param_shape.to_vec(),
            f_cont: vec![f_init; groups],
            i_cont: vec![i_init; groups],
            signed: vec![signed; groups],
            running_max_abs: vec![0.0; groups],
            stats_populated: false,
            round,
            overflow,
            trainable: true,
            sat_continuous_i: false,
        }
    }

    pub fn frozen(mut self) -> Self {
        self.trainable = false;
        self
    }

    pub fn param_len(&self) -> usize {
        self.param_shape.iter().product()
    }

    pub fn groups(&self) -> usize {
        self.f_cont.len()
    }

    /// Group of a flat index into the parameter tensor.
    pub fn group_of(&self, param_index: usize) -> usize {
        match self.granularity {
            Granularity::PerTensor => 0,
            Granularity::PerChannel => param_index % self.param_shape.last().copied().unwrap_or(1),
            Granularity::PerParameter => param_index,
        }
    }

    pub fn f_used(&self, group: usize) -> i32 {
        round_half_up(self.f_cont[group]) as i32
    }

    pub fn i_used(&self, group: usize) -> i32 {
        round_half_up(self.i_cont[group]) as i32
    }

    /// Training-time integer format of a group. For WRAP groups the integer
    /// bits are irrelevant during training and taken from the running stats.
    pub fn sat_format(&self, group: usize) -> FixedPointFormat {
        FixedPointFormat::new(self.signed[group], self.i_used(group), self.f_used(group))
            .with_modes(self.round, self.overflow)
    }

    pub fn reset_stats(&mut self) {
        self.running_max_abs.iter_mut().for_each(|m| *m = 0.0);
        self.stats_populated = false;
    }

    pub fn check(&self) -> Result<()> {
        let g = group_count(self.granularity, &self.param_shape);
        if self.f_cont.len() != g
            || self.i_cont.len() != g
            || self.signed.len() != g
            || self.running_max_abs.len() != g
        {
            return Err(Error::ContractViolation(format!(
                "quantizer state arrays must have {g} entries"
            )));
        }
        Ok(())
    }
}

pub(crate) fn group_count(granularity: Granularity, shape: &[usize]) -> usize {
    match granularity {
        Granularity::PerTensor => 1,
        Granularity::PerChannel => shape.last().copied().unwrap_or(1),
        Granularity::PerParameter => shape.iter().product(),
    }
}

/// Deployment quantization of every element with one format.
pub fn quantize_deploy(x: &[f64], fmt: &FixedPointFormat) -> Vec<f64> {
    x.iter().map(|&v| fmt.quantize(v)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClipSide {
    None,
    Lower,
    Upper,
    /// SAT group with non-positive width.
    Pruned,
}

/// Everything the backward pass needs from a training forward.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantGradBundle {
    /// `x - round(x)` at the group's fractional width, before clipping.
    pub quant_error: Vec<f64>,
    pub clip: Vec<ClipSide>,
    pub f_used: Vec<i32>,
    /// Exponent used for the SAT bounds (rounded or continuous `i`).
    pub i_used: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantGrads {
    pub input: Vec<f64>,
    pub f: Vec<f64>,
    pub i: Vec<f64>,
}

/// Training forward: rounding at `round(f_cont)` and, for SAT, clipping at
/// the bounds from `i_cont`. WRAP never wraps during training.
pub fn quantize_train_forward(
    x: &[f64],
    state: &mut QuantizerState,
    update_stats: bool,
) -> Result<(Vec<f64>, QuantGradBundle)> {
    state.check()?;
    let plen = state.param_len();
    if plen == 0 || !x.len().is_multiple_of(plen) {
        return Err(Error::ShapeMismatch {
            op: "quantize",
            detail: format!("{} elements for parameter length {plen}", x.len()),
        });
    }
    let groups = state.groups();
    let f_used: Vec<i32> = (0..groups).map(|g| state.f_used(g)).collect();
    let i_used: Vec<f64> = (0..groups)
        .map(|g| {
            if state.sat_continuous_i {
                state.i_cont[g]
            } else {
                state.i_used(g) as f64
            }
        })
        .collect();

    let mut out = Vec::with_capacity(x.len());
    let mut err = Vec::with_capacity(x.len());
    let mut clip = Vec::with_capacity(x.len());
    for (e, &v) in x.iter().enumerate() {
        let g = state.group_of(e % plen);
        let f = f_used[g];
        let y = libm::ldexp(v, f);
        let k = match state.round {
            RoundMode::Rnd => round_half_up(y),
            RoundMode::Trn => libm::floor(y),
        };
        let q0 = libm::ldexp(k, -f);
        let delta = v - q0;
        if update_stats {
            let a = libm::fabs(v);
            if a > state.running_max_abs[g] {
                state.running_max_abs[g] = a;
            }
        }
        let (q, side) = match state.overflow {
            OverflowMode::Wrap => (q0, ClipSide::None),
            OverflowMode::Sat => {
                let s = state.signed[g];
                let i = i_used[g];
                let hi = libm::exp2(i) - libm::ldexp(1.0, -f);
                let lo = if s { -libm::exp2(i) } else { 0.0 };
                if (s as i32 as f64) + i + f as f64 <= 0.0 {
                    (0.0, ClipSide::Pruned)
                } else if q0 > hi {
                    (hi, ClipSide::Upper)
                } else if q0 < lo {
                    (lo, ClipSide::Lower)
                } else {
                    (q0, ClipSide::None)
                }
            }
        };
        out.push(q + 0.0);
        err.push(delta);
        clip.push(side);
    }
    if update_stats {
        state.stats_populated = true;
    }
    Ok((
        out,
        QuantGradBundle {
            quant_error: err,
            clip,
            f_used,
            i_used,
        },
    ))
}

/// Backward rules: straight-through on the input, `ln2 * delta` on `f`, and
/// the derivative of the active clip bound on `i` (SAT only).
pub fn quantize_backward(
    bundle: &QuantGradBundle,
    upstream: &[f64],
    state: &QuantizerState,
) -> Result<QuantGrads> {
    let n = bundle.quant_error.len();
    if upstream.len() != n || bundle.clip.len() != n || bundle.f_used.len() != state.groups() {
        return Err(Error::ContractViolation(
            "bundle does not match upstream gradient or quantizer state".to_string(),
        ));
    }
    let plen = state.param_len();
    let groups = state.groups();
    let mut gin = vec![0.0; n];
    let mut gf = vec![0.0; groups];
    let mut gi = vec![0.0; groups];
    for e in 0..n {
        let u = upstream[e];
        let g = state.group_of(e % plen);
        match bundle.clip[e] {
            ClipSide::None => {
                gin[e] = u;
                gf[g] += u * LN_2 * bundle.quant_error[e];
            }
            ClipSide::Upper => {
                // hi = 2^i - 2^-f
                let f = bundle.f_used[g];
                gf[g] += u * LN_2 * libm::ldexp(1.0, -f);
                gi[g] += u * LN_2 * libm::exp2(bundle.i_used[g]);
            }
            ClipSide::Lower => {
                if state.signed[g] {
                    gi[g] -= u * LN_2 * libm::exp2(bundle.i_used[g]);
                }
            }
            ClipSide::Pruned => {}
        }
    }
    Ok(QuantGrads {
        input: gin,
        f: gf,
        i: gi,
    })
}
