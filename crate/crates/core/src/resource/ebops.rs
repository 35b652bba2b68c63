use alloc::vec;
use alloc::vec::Vec;

use super::calibrate::{activation_format, bias_format, freeze, weight_group_formats, CalibrationResult};
use super::csd::Csd;
use crate::autodiff::{Tape, Var};
use crate::fxp::{FixedPointFormat, OverflowMode, QuantizerState};
use crate::qlayers::{Bindings, DeployModel, QModel};
use crate::{Error, Result};

/// Exponent of the LUT predictor `LUT ~ exp(0.985 * ln(EBOPs))`.
pub const LUT_EXPONENT: f64 = 0.985;
/// DSP weight in `EBOPs ~ LUT + 55 * DSP`. Measured on UltraScale+ parts;
/// other device families may differ.
pub const DEFAULT_DSP_COEFFICIENT: f64 = 55.0;

/// Predicted LUT usage for a given EBOPs total.
pub fn lut_from_ebops(ebops: f64) -> f64 {
    if ebops <= 0.0 {
        0.0
    } else {
        libm::exp(LUT_EXPONENT * libm::log(ebops))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LayerEbops {
    pub mul: u64,
    pub add: u64,
    /// Nonzero CSD digits of each weight times the activation width.
    pub csd_weighted: u64,
}

impl LayerEbops {
    pub fn total(&self) -> u64 {
        self.mul + self.add
    }
}

/// Exact EBOPs with per-layer breakdown and the LUT/DSP predictors.
#[derive(Debug, Clone, PartialEq)]
pub struct EbopsReport {
    pub layers: Vec<LayerEbops>,
    pub mul_ebops: u64,
    pub add_ebops: u64,
    pub total: u64,
    pub csd_weighted_ebops: u64,
    pub lut_pred: f64,
    /// Predicted `LUT + coefficient * DSP`, which tracks EBOPs one to one.
    pub lut_plus_55dsp_pred: f64,
    pub dsp_coefficient: f64,
}

impl EbopsReport {
    fn from_layers(layers: Vec<LayerEbops>) -> Self {
        let mul_ebops = layers.iter().map(|l| l.mul).sum();
        let add_ebops = layers.iter().map(|l| l.add).sum();
        let total = mul_ebops + add_ebops;
        Self {
            csd_weighted_ebops: layers.iter().map(|l| l.csd_weighted).sum(),
            layers,
            mul_ebops,
            add_ebops,
            total,
            lut_pred: lut_from_ebops(total as f64),
            lut_plus_55dsp_pred: total as f64,
            dsp_coefficient: DEFAULT_DSP_COEFFICIENT,
        }
    }

    pub fn with_dsp_coefficient(mut self, c: f64) -> Self {
        self.dsp_coefficient = c;
        self
    }

    /// LUTs left once `dsp` DSP blocks absorb part of the EBOPs.
    pub fn lut_given_dsp(&self, dsp: f64) -> f64 {
        (self.lut_plus_55dsp_pred - self.dsp_coefficient * dsp).max(0.0)
    }
}

/// Exact EBOPs of a frozen model.
pub fn ebops_of_deployed(model: &DeployModel) -> EbopsReport {
    let mut in_fmt: &[FixedPointFormat] = &model.input_fmt;
    let mut layers = Vec::with_capacity(model.layers.len());
    for layer in &model.layers {
        let mut out = LayerEbops::default();
        for k in 0..layer.n_out {
            let mut acc_bits = 0u64;
            for j in 0..layer.n_in {
                let e = j * layer.n_out + k;
                let m = layer.weight_mantissa[e];
                let bw = layer.weight_fmt[e].width() as u64;
                let ba = in_fmt[j].width() as u64;
                if m == 0 || bw == 0 || ba == 0 {
                    continue;
                }
                out.mul += bw * ba;
                out.csd_weighted += Csd::encode(m).nonzero_digits() as u64 * ba;
                acc_bits = acc_bits.max(bw + ba);
            }
            if layer.bias_mantissa[k] != 0 {
                out.add += (layer.bias_fmt[k].width() as u64).max(acc_bits);
            }
        }
        layers.push(out);
        in_fmt = &layer.act_fmt;
    }
    EbopsReport::from_layers(layers)
}

/// Exact EBOPs after calibration.
pub fn ebops_exact(model: &QModel, calib: &CalibrationResult) -> Result<EbopsReport> {
    Ok(ebops_of_deployed(&freeze(model, calib)?))
}

/// Width of each group and its derivatives with respect to `f_cont` and
/// `i_cont` (straight-through rounding, calibrated `i` held constant for WRAP).
struct GroupBits {
    bits: Vec<f64>,
    df: Vec<f64>,
    di: Vec<f64>,
}

impl GroupBits {
    fn from_formats(q: &QuantizerState, fmts: &[FixedPointFormat]) -> Self {
        let bits: Vec<f64> = fmts.iter().map(|f| f.width() as f64).collect();
        let live = |b: f64| if b > 0.0 { 1.0 } else { 0.0 };
        let df = bits.iter().map(|&b| live(b)).collect();
        let di = bits
            .iter()
            .map(|&b| if q.overflow == OverflowMode::Sat { live(b) } else { 0.0 })
            .collect();
        Self { bits, df, di }
    }

    fn activations(q: &QuantizerState, name: &str) -> Result<Self> {
        if q.overflow == OverflowMode::Wrap && !q.stats_populated {
            return Err(Error::CalibrationStatsMissing(name.into()));
        }
        let fmts: Vec<_> = (0..q.groups()).map(|g| activation_format(q, g)).collect();
        Ok(Self::from_formats(q, &fmts))
    }
}

/// Differentiable EBOPs estimate and its gradient per quantizer, in
/// [`QModel::quantizers`] order as `(d/d f_cont, d/d i_cont)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateEbops {
    pub value: f64,
    pub grads: Vec<(Vec<f64>, Vec<f64>)>,
}

fn zero_grads(model: &QModel) -> Vec<(Vec<f64>, Vec<f64>)> {
    model
        .quantizers()
        .iter()
        .map(|q| (vec![0.0; q.groups()], vec![0.0; q.groups()]))
        .collect()
}

/// Per-group widths of every quantizer, in [`QModel::quantizers`] order.
fn all_group_bits(model: &QModel) -> Result<Vec<GroupBits>> {
    let mut out = vec![GroupBits::activations(&model.input_q, "input")?];
    for (l, layer) in model.layers.iter().enumerate() {
        let w = weight_group_formats(&layer.weight, &layer.weight_q);
        out.push(GroupBits::from_formats(&layer.weight_q, &w));
        out.push(GroupBits::activations(
            &layer.act_q,
            &alloc::format!("layer {l} activation"),
        )?);
    }
    Ok(out)
}

pub fn ebops_surrogate_value(model: &QModel) -> Result<SurrogateEbops> {
    let bits = all_group_bits(model)?;
    let mut grads = zero_grads(model);
    let mut value = 0.0;
    for (l, layer) in model.layers.iter().enumerate() {
        let (qa, qw) = (if l == 0 { 0 } else { 2 * l }, 1 + 2 * l);
        let a_q = model.input_quantizer_of(l);
        let w_q = &layer.weight_q;
        let (n_in, n_out) = (layer.n_in(), layer.n_out());
        let bias_fmt = bias_format(layer, a_q);
        for k in 0..n_out {
            let mut acc: Option<(f64, usize, usize)> = None;
            for j in 0..n_in {
                let e = j * n_out + k;
                let (gw, ga) = (w_q.group_of(e), a_q.group_of(j));
                let (bw, ba) = (bits[qw].bits[gw], bits[qa].bits[ga]);
                if bw == 0.0 || ba == 0.0 || layer.weight_is_zero(e) {
                    continue;
                }
                value += bw * ba;
                grads[qw].0[gw] += ba * bits[qw].df[gw];
                grads[qw].1[gw] += ba * bits[qw].di[gw];
                grads[qa].0[ga] += bw * bits[qa].df[ga];
                grads[qa].1[ga] += bw * bits[qa].di[ga];
                if acc.is_none_or(|(b, _, _)| bw + ba > b) {
                    acc = Some((bw + ba, gw, ga));
                }
            }
            let bias_m = bias_fmt[k].quantize_mantissa(layer.bias[k]);
            if bias_m == 0 {
                continue;
            }
            let bb = bias_fmt[k].width() as f64;
            match acc {
                // The bias width carries no gradient; ties resolve to it.
                Some((b, gw, ga)) if b > bb => {
                    value += b;
                    grads[qw].0[gw] += bits[qw].df[gw];
                    grads[qw].1[gw] += bits[qw].di[gw];
                    grads[qa].0[ga] += bits[qa].df[ga];
                    grads[qa].1[ga] += bits[qa].di[ga];
                }
                _ => value += bb,
            }
        }
    }
    Ok(SurrogateEbops { value, grads })
}

/// Records the surrogate on `tape` as a scalar connected to the bit-width
/// leaves in `bindings`.
pub fn ebops_surrogate(tape: &mut Tape, model: &QModel, bindings: &Bindings) -> Result<Var> {
    let s = ebops_surrogate_value(model)?;
    tape.custom_scalar(s.value, partials(model, bindings, s.grads, 1.0))
}

pub(crate) fn partials(
    model: &QModel,
    bindings: &Bindings,
    grads: Vec<(Vec<f64>, Vec<f64>)>,
    scale: f64,
) -> Vec<(Var, Vec<f64>)> {
    let mut out = Vec::with_capacity(2 * grads.len());
    for ((fi, ii), (gf, gi)) in model.quantizer_var_indices().into_iter().zip(grads) {
        out.push((bindings.vars[fi], gf.into_iter().map(|g| g * scale).collect()));
        out.push((bindings.vars[ii], gi.into_iter().map(|g| g * scale).collect()));
    }
    out
}

/// Sum of all group widths and its gradient, in the same layout as
/// [`SurrogateEbops`].
pub(crate) fn bitwidth_sum(model: &QModel) -> Result<SurrogateEbops> {
    let bits = all_group_bits(model)?;
    let value = bits.iter().flat_map(|b| b.bits.iter()).sum();
    let grads = bits.into_iter().map(|b| (b.df, b.di)).collect();
    Ok(SurrogateEbops { value, grads })
}
