//! JSON checkpoints: the trainable model plus, once calibrated, its integer
//! deployment (format tokens per group and decimal weight mantissas).

use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use fxq_core::autodiff::Tensor;
use fxq_core::fxp::{FixedPointFormat, Granularity, OverflowMode, QuantizerState, RoundMode};
use fxq_core::qlayers::{DeployLayer, DeployModel, QDense, QModel};
use fxq_core::resource::{freeze, CalibrationResult, LayerCalibration};
use fxq_core::trainer::Checkpoint;
use serde::{Deserialize, Serialize};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizerJson {
    pub granularity: String,
    pub shape: Vec<usize>,
    pub signed: Vec<bool>,
    pub f: Vec<f64>,
    pub i: Vec<f64>,
    pub round: String,
    pub overflow: String,
    pub trainable: bool,
    pub sat_continuous_i: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerJson {
    pub n_in: usize,
    pub n_out: usize,
    pub relu: bool,
    /// Row-major `n_in x n_out`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub weight_q: QuantizerJson,
    pub act_q: QuantizerJson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelJson {
    pub input_q: QuantizerJson,
    pub layers: Vec<LayerJson>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeployLayerJson {
    pub n_in: usize,
    pub n_out: usize,
    pub relu: bool,
    pub weight_granularity: String,
    /// One token per weight group.
    pub weight_formats: Vec<String>,
    pub weight_mantissas: Vec<i128>,
    pub bias_formats: Vec<String>,
    pub bias_mantissas: Vec<i128>,
    pub act_granularity: String,
    pub act_formats: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeployJson {
    pub input_granularity: String,
    pub input_formats: Vec<String>,
    pub layers: Vec<DeployLayerJson>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointFile {
    pub version: u32,
    pub label: String,
    pub epoch: usize,
    pub val_metric: f64,
    pub ebops: f64,
    pub surrogate_ebops: f64,
    pub exact: bool,
    pub model: ModelJson,
    pub deploy: Option<DeployJson>,
}

fn gran_name(g: Granularity) -> &'static str {
    match g {
        Granularity::PerTensor => "per-tensor",
        Granularity::PerChannel => "per-channel",
        Granularity::PerParameter => "per-parameter",
    }
}

fn gran_parse(s: &str) -> Result<Granularity> {
    Ok(match s {
        "per-tensor" => Granularity::PerTensor,
        "per-channel" => Granularity::PerChannel,
        "per-parameter" => Granularity::PerParameter,
        _ => bail!("unknown granularity `{s}`"),
    })
}

fn token(f: &str) -> Result<FixedPointFormat> {
    f.parse().with_context(|| format!("bad format token `{f}`"))
}

impl QuantizerJson {
    pub fn from_state(q: &QuantizerState) -> Self {
        Self {
            granularity: gran_name(q.granularity).into(),
            shape: q.param_shape.clone(),
            signed: q.signed.clone(),
            f: q.f_cont.clone(),
            i: q.i_cont.clone(),
            round: match q.round {
                RoundMode::Rnd => "RND",
                RoundMode::Trn => "TRN",
            }
            .into(),
            overflow: match q.overflow {
                OverflowMode::Wrap => "WRAP",
                OverflowMode::Sat => "SAT",
            }
            .into(),
            trainable: q.trainable,
            sat_continuous_i: q.sat_continuous_i,
        }
    }

    pub fn to_state(&self) -> Result<QuantizerState> {
        let round = match self.round.as_str() {
            "RND" => RoundMode::Rnd,
            "TRN" => RoundMode::Trn,
            r => bail!("unknown round mode `{r}`"),
        };
        let overflow = match self.overflow.as_str() {
            "WRAP" => OverflowMode::Wrap,
            "SAT" => OverflowMode::Sat,
            o => bail!("unknown overflow mode `{o}`"),
        };
        let mut q = QuantizerState::new(gran_parse(&self.granularity)?, &self.shape, true, round, overflow, 0.0, 0.0);
        let g = q.groups();
        ensure!(
            self.f.len() == g && self.i.len() == g && self.signed.len() == g,
            "quantizer with {g} groups has {} / {} / {} entries",
            self.f.len(),
            self.i.len(),
            self.signed.len()
        );
        q.f_cont = self.f.clone();
        q.i_cont = self.i.clone();
        q.signed = self.signed.clone();
        q.trainable = self.trainable;
        q.sat_continuous_i = self.sat_continuous_i;
        Ok(q)
    }
}

impl ModelJson {
    pub fn from_model(m: &QModel) -> Self {
        Self {
            input_q: QuantizerJson::from_state(&m.input_q),
            layers: m
                .layers
                .iter()
                .map(|l| LayerJson {
                    n_in: l.n_in(),
                    n_out: l.n_out(),
                    relu: l.relu,
                    weight: l.weight.data().to_vec(),
                    bias: l.bias.clone(),
                    weight_q: QuantizerJson::from_state(&l.weight_q),
                    act_q: QuantizerJson::from_state(&l.act_q),
                })
                .collect(),
        }
    }

    pub fn to_model(&self) -> Result<QModel> {
        let mut layers = Vec::new();
        let mut width = self.input_q.shape.iter().product::<usize>();
        for (i, l) in self.layers.iter().enumerate() {
            ensure!(l.n_in == width, "layer {i} expects {} inputs, previous width is {width}", l.n_in);
            ensure!(l.bias.len() == l.n_out, "layer {i}: {} biases for {} outputs", l.bias.len(), l.n_out);
            let weight_q = l.weight_q.to_state()?;
            let act_q = l.act_q.to_state()?;
            ensure!(
                weight_q.param_len() == l.n_in * l.n_out && act_q.param_len() == l.n_out,
                "layer {i}: quantizer shapes do not match the layer"
            );
            layers.push(QDense {
                weight: Tensor::matrix(l.n_in, l.n_out, l.weight.clone())?,
                bias: l.bias.clone(),
                weight_q,
                act_q,
                relu: l.relu,
            });
            width = l.n_out;
        }
        Ok(QModel {
            input_q: self.input_q.to_state()?,
            layers,
        })
    }
}

fn group_tokens(fmts: &[FixedPointFormat]) -> Vec<String> {
    fmts.iter().map(FixedPointFormat::to_string).collect()
}

/// Expands per-group tokens to one format per element.
fn expand(gran: &str, shape: &[usize], tokens: &[String]) -> Result<Vec<FixedPointFormat>> {
    let q = QuantizerState::new(gran_parse(gran)?, shape, true, RoundMode::Rnd, OverflowMode::Wrap, 0.0, 0.0);
    ensure!(
        tokens.len() == q.groups(),
        "{} format tokens for {} groups",
        tokens.len(),
        q.groups()
    );
    let fmts = tokens.iter().map(|t| token(t)).collect::<Result<Vec<_>>>()?;
    Ok((0..q.param_len()).map(|e| fmts[q.group_of(e)]).collect())
}

impl DeployJson {
    pub fn new(model: &QModel, calib: &CalibrationResult) -> Result<Self> {
        let deployed = freeze(model, calib)?;
        Ok(Self {
            input_granularity: gran_name(model.input_q.granularity).into(),
            input_formats: group_tokens(&calib.input),
            layers: model
                .layers
                .iter()
                .zip(&calib.layers)
                .zip(&deployed.layers)
                .map(|((l, c), d)| DeployLayerJson {
                    n_in: d.n_in,
                    n_out: d.n_out,
                    relu: d.relu,
                    weight_granularity: gran_name(l.weight_q.granularity).into(),
                    weight_formats: group_tokens(&c.weight),
                    weight_mantissas: d.weight_mantissa.clone(),
                    bias_formats: group_tokens(&c.bias),
                    bias_mantissas: d.bias_mantissa.clone(),
                    act_granularity: gran_name(l.act_q.granularity).into(),
                    act_formats: group_tokens(&c.act),
                })
                .collect(),
        })
    }

    pub fn calibration(&self) -> Result<CalibrationResult> {
        let parse = |v: &[String]| v.iter().map(|t| token(t)).collect::<Result<Vec<_>>>();
        Ok(CalibrationResult {
            input: parse(&self.input_formats)?,
            layers: self
                .layers
                .iter()
                .map(|l| {
                    Ok(LayerCalibration {
                        weight: parse(&l.weight_formats)?,
                        bias: parse(&l.bias_formats)?,
                        act: parse(&l.act_formats)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?,
        })
    }

    /// The stored integer model, checked for consistency.
    pub fn to_deploy(&self) -> Result<DeployModel> {
        let n_inputs = self.layers.first().map_or(self.input_formats.len(), |l| l.n_in);
        let input_fmt = expand(&self.input_granularity, &[n_inputs], &self.input_formats)?;
        let mut layers = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            let ctx = || format!("deploy layer {i}");
            let weight_fmt = expand(&l.weight_granularity, &[l.n_in, l.n_out], &l.weight_formats).with_context(ctx)?;
            let act_fmt = expand(&l.act_granularity, &[l.n_out], &l.act_formats).with_context(ctx)?;
            let bias_fmt = l.bias_formats.iter().map(|t| token(t)).collect::<Result<Vec<_>>>()?;
            let layer = DeployLayer {
                n_in: l.n_in,
                n_out: l.n_out,
                weight_fmt,
                weight_mantissa: l.weight_mantissas.clone(),
                bias_fmt,
                bias_mantissa: l.bias_mantissas.clone(),
                act_fmt,
                relu: l.relu,
            };
            for (e, (&m, f)) in layer.weight_mantissa.iter().zip(&layer.weight_fmt).enumerate() {
                ensure!(f.contains_mantissa(m), "{}: weight mantissa {m} at {e} outside {f}", ctx());
            }
            for (k, (&m, f)) in layer.bias_mantissa.iter().zip(&layer.bias_fmt).enumerate() {
                ensure!(f.contains_mantissa(m), "{}: bias mantissa {m} at {k} outside {f}", ctx());
            }
            layers.push(layer);
        }
        let d = DeployModel { input_fmt, layers };
        d.validate()?;
        Ok(d)
    }
}

impl CheckpointFile {
    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let deploy = match &c.calibration {
            Some(calib) => Some(DeployJson::new(&c.model, calib)?),
            None => None,
        };
        Ok(Self {
            version: CHECKPOINT_VERSION,
            label: c.label.clone(),
            epoch: c.epoch,
            val_metric: c.val_metric,
            ebops: c.ebops,
            surrogate_ebops: c.surrogate_ebops,
            exact: c.exact,
            model: ModelJson::from_model(&c.model),
            deploy,
        })
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        Ok(Checkpoint {
            epoch: self.epoch,
            label: self.label.clone(),
            val_metric: self.val_metric,
            ebops: self.ebops,
            surrogate_ebops: self.surrogate_ebops,
            exact: self.exact,
            model: self.model.to_model()?,
            calibration: self.deploy.as_ref().map(DeployJson::calibration).transpose()?,
        })
    }

    pub fn deploy(&self) -> Result<DeployModel> {
        match &self.deploy {
            Some(d) => d.to_deploy(),
            None => bail!("checkpoint is not calibrated; run `fxq calibrate` first"),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let c: Self = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        ensure!(c.version == CHECKPOINT_VERSION, "unsupported checkpoint version {}", c.version);
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }
}
