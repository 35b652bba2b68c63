use alloc::vec::Vec;

use crate::autodiff::Tensor;
use crate::fxp::{integer_span_for, magnitude_bits, FixedPointFormat, OverflowMode, QuantizerState, RoundMode};
use crate::qlayers::{DeployLayer, DeployModel, QDense, QModel};
use crate::{Error, Result};

/// Integer formats per quantizer group after profiling.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerCalibration {
    /// One per weight-quantizer group.
    pub weight: Vec<FixedPointFormat>,
    /// One per output lane.
    pub bias: Vec<FixedPointFormat>,
    /// One per activation-quantizer group.
    pub act: Vec<FixedPointFormat>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    /// One per input-quantizer group.
    pub input: Vec<FixedPointFormat>,
    pub layers: Vec<LayerCalibration>,
}

/// Format of an activation group from its running statistics. WRAP groups
/// get the smallest integer width that holds the rounded maximum; SAT groups
/// keep their trained `i`.
pub fn activation_format(q: &QuantizerState, g: usize) -> FixedPointFormat {
    let f = q.f_used(g);
    let s = q.signed[g];
    let fmt = match q.overflow {
        OverflowMode::Sat => FixedPointFormat::new(s, q.i_used(g), f),
        OverflowMode::Wrap => {
            let probe = FixedPointFormat::new(s, 0, f).with_modes(q.round, q.overflow);
            let m = probe.round_mantissa(q.running_max_abs[g]);
            if m <= 0.0 {
                FixedPointFormat::pruned(s, f)
            } else {
                FixedPointFormat::new(s, magnitude_bits(m as u128) - f, f)
            }
        }
    };
    fmt.with_modes(q.round, q.overflow)
}

/// Formats of a weight quantizer's groups from the current quantized values.
pub fn weight_group_formats(weight: &Tensor, q: &QuantizerState) -> Vec<FixedPointFormat> {
    let mut span: Vec<Option<i32>> = alloc::vec![None; q.groups()];
    for (e, &w) in weight.data().iter().enumerate() {
        let g = q.group_of(e);
        let probe = FixedPointFormat::new(q.signed[g], 0, q.f_used(g)).with_modes(q.round, q.overflow);
        let m = probe.round_mantissa(w) as i128;
        if m != 0 {
            // Unsigned groups wrap negative weights; size them by magnitude.
            let n = if q.signed[g] {
                integer_span_for(m, true)
            } else {
                magnitude_bits(m.unsigned_abs())
            };
            span[g] = Some(span[g].map_or(n, |s| s.max(n)));
        }
    }
    (0..q.groups())
        .map(|g| {
            let (s, f) = (q.signed[g], q.f_used(g));
            let fmt = match (q.overflow, span[g]) {
                (OverflowMode::Sat, _) => FixedPointFormat::new(s, q.i_used(g), f),
                (OverflowMode::Wrap, Some(n)) => FixedPointFormat::new(s, n - f, f),
                (OverflowMode::Wrap, None) => FixedPointFormat::pruned(s, f),
            };
            fmt.with_modes(q.round, q.overflow)
        })
        .collect()
}

/// Signed bias formats per lane at the layer's bias fractional widths.
pub fn bias_format(layer: &QDense, input_q: &QuantizerState) -> Vec<FixedPointFormat> {
    layer
        .bias
        .iter()
        .zip(layer.bias_frac_bits(input_q))
        .map(|(&b, f)| {
            let probe = FixedPointFormat::new(true, 0, f);
            let m = probe.round_mantissa(b) as i128;
            let fmt = if m == 0 {
                FixedPointFormat::pruned(true, f)
            } else {
                FixedPointFormat::new(true, integer_span_for(m, true) - f, f)
            };
            fmt.with_modes(RoundMode::Rnd, OverflowMode::Wrap)
        })
        .collect()
}

/// Profiles activation ranges over `samples` (rows of `n_inputs` features)
/// and fixes integer formats for every group. The model's running statistics
/// are reset and replaced by the profiled maxima.
pub fn calibrate<'a, I>(model: &mut QModel, samples: I) -> Result<CalibrationResult>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    const CHUNK: usize = 512;
    let n_in = model.n_inputs();
    model.reset_stats();
    let mut buf: Vec<f64> = Vec::with_capacity(CHUNK * n_in);
    let mut seen = 0usize;
    let flush = |model: &mut QModel, buf: &mut Vec<f64>| -> Result<()> {
        if buf.is_empty() {
            return Ok(());
        }
        let rows = buf.len() / n_in;
        let x = Tensor::matrix(rows, n_in, core::mem::take(buf))?;
        let mut tape = crate::autodiff::Tape::new();
        let b = model.bind(&mut tape);
        model.forward_train(&mut tape, &b, x, true)?;
        Ok(())
    };
    for row in samples {
        if row.len() != n_in {
            return Err(Error::ShapeMismatch {
                op: "calibrate",
                detail: alloc::format!("sample of {} features, model expects {n_in}", row.len()),
            });
        }
        buf.extend_from_slice(row);
        seen += 1;
        if buf.len() == CHUNK * n_in {
            flush(model, &mut buf)?;
        }
    }
    flush(model, &mut buf)?;
    if seen == 0 {
        return Err(Error::EmptyDataset);
    }
    Ok(formats_from_stats(model))
}

/// Formats from the model's current statistics and quantized weights.
pub(crate) fn formats_from_stats(model: &QModel) -> CalibrationResult {
    let groups = |q: &QuantizerState| (0..q.groups()).map(|g| activation_format(q, g)).collect();
    let input = groups(&model.input_q);
    let layers = model
        .layers
        .iter()
        .enumerate()
        .map(|(l, layer)| LayerCalibration {
            weight: weight_group_formats(&layer.weight, &layer.weight_q),
            bias: bias_format(layer, model.input_quantizer_of(l)),
            act: groups(&layer.act_q),
        })
        .collect();
    CalibrationResult { input, layers }
}

/// Expands group formats to per-element formats and integer mantissas.
pub fn freeze(model: &QModel, calib: &CalibrationResult) -> Result<DeployModel> {
    if calib.layers.len() != model.layers.len() || calib.input.len() != model.input_q.groups() {
        return Err(Error::ContractViolation(
            "calibration does not match model".into(),
        ));
    }
    let lanes = |q: &QuantizerState, fmts: &[FixedPointFormat]| -> Vec<FixedPointFormat> {
        (0..q.param_len()).map(|e| fmts[q.group_of(e)]).collect()
    };
    let input_fmt = lanes(&model.input_q, &calib.input);
    let mut layers = Vec::with_capacity(model.layers.len());
    for (layer, cal) in model.layers.iter().zip(&calib.layers) {
        let weight_fmt = lanes(&layer.weight_q, &cal.weight);
        let weight_mantissa = layer
            .weight
            .data()
            .iter()
            .zip(&weight_fmt)
            .map(|(&w, f)| f.quantize_mantissa(w))
            .collect();
        let bias_mantissa = layer
            .bias
            .iter()
            .zip(&cal.bias)
            .map(|(&b, f)| f.quantize_mantissa(b))
            .collect();
        layers.push(DeployLayer {
            n_in: layer.n_in(),
            n_out: layer.n_out(),
            weight_fmt,
            weight_mantissa,
            bias_fmt: cal.bias.clone(),
            bias_mantissa,
            act_fmt: lanes(&layer.act_q, &cal.act),
            relu: layer.relu,
        });
    }
    let d = DeployModel { input_fmt, layers };
    d.validate()?;
    Ok(d)
}
