use alloc::vec::Vec;

use crate::fxp::FixedPointFormat;
use crate::{Error, Result};

/// Calibrated layer with integer formats and mantissas per element.
#[derive(Debug, Clone, PartialEq)]
pub struct DeployLayer {
    pub n_in: usize,
    pub n_out: usize,
    /// Row-major `n_in x n_out`.
    pub weight_fmt: Vec<FixedPointFormat>,
    pub weight_mantissa: Vec<i128>,
    pub bias_fmt: Vec<FixedPointFormat>,
    pub bias_mantissa: Vec<i128>,
    pub act_fmt: Vec<FixedPointFormat>,
    pub relu: bool,
}

impl DeployLayer {
    pub fn weight(&self, j: usize, k: usize) -> f64 {
        let e = j * self.n_out + k;
        self.weight_fmt[e].value_of(self.weight_mantissa[e])
    }

    pub fn bias(&self, k: usize) -> f64 {
        self.bias_fmt[k].value_of(self.bias_mantissa[k])
    }

    /// Number of weights quantized to zero.
    pub fn pruned_weights(&self) -> usize {
        self.weight_mantissa.iter().filter(|&&m| m == 0).count()
    }
}

/// A trained model frozen to integer fixed-point formats.
#[derive(Debug, Clone, PartialEq)]
pub struct DeployModel {
    pub input_fmt: Vec<FixedPointFormat>,
    pub layers: Vec<DeployLayer>,
}

impl DeployModel {
    pub fn n_inputs(&self) -> usize {
        self.input_fmt.len()
    }

    pub fn n_outputs(&self) -> usize {
        self.layers.last().map_or(self.input_fmt.len(), |l| l.n_out)
    }

    pub fn output_fmt(&self) -> &[FixedPointFormat] {
        self.layers.last().map_or(&self.input_fmt, |l| &l.act_fmt)
    }

    pub fn validate(&self) -> Result<()> {
        let mut width = self.input_fmt.len();
        for (l, layer) in self.layers.iter().enumerate() {
            let n = layer.n_in * layer.n_out;
            let ok = layer.n_in == width
                && layer.weight_fmt.len() == n
                && layer.weight_mantissa.len() == n
                && layer.bias_fmt.len() == layer.n_out
                && layer.bias_mantissa.len() == layer.n_out
                && layer.act_fmt.len() == layer.n_out;
            if !ok {
                return Err(Error::ContractViolation(alloc::format!(
                    "layer {l} has inconsistent dimensions"
                )));
            }
            width = layer.n_out;
        }
        Ok(())
    }

    /// Deployment-mode forward of one sample in `f64`. Every product and
    /// partial sum is exact as long as the accumulator spans at most 53 bits.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut h: Vec<f64> = x
            .iter()
            .zip(&self.input_fmt)
            .map(|(&v, f)| f.quantize(v))
            .collect();
        for layer in &self.layers {
            h = (0..layer.n_out)
                .map(|k| {
                    let mut acc = 0.0;
                    for (j, &hj) in h.iter().enumerate() {
                        acc += hj * layer.weight(j, k);
                    }
                    acc += layer.bias(k);
                    if layer.relu {
                        acc = acc.max(0.0);
                    }
                    layer.act_fmt[k].quantize(acc)
                })
                .collect();
        }
        h
    }

    /// Total mantissa count of all weights.
    pub fn weight_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight_mantissa.len()).sum()
    }

    pub fn pruned_weight_count(&self) -> usize {
        self.layers.iter().map(DeployLayer::pruned_weights).sum()
    }
}
