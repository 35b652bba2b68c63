use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::fxp::{round_half_up, FixedPointFormat, Granularity, OverflowMode, QuantizerState, RoundMode};
use crate::{Error, Result};

/// Dense layer `act_q(relu?(x * q(W) + q(b)))`.
#[derive(Debug, Clone, PartialEq)]
pub struct QDense {
    /// `n_in x n_out`.
    pub weight: Tensor,
    pub bias: Vec<f64>,
    pub weight_q: QuantizerState,
    pub act_q: QuantizerState,
    pub relu: bool,
}

impl QDense {
    pub fn n_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn n_out(&self) -> usize {
        self.weight.shape()[1]
    }

    /// Whether weight `e` (flat index) quantizes to zero.
    pub fn weight_is_zero(&self, e: usize) -> bool {
        let q = &self.weight_q;
        FixedPointFormat::new(true, 0, q.f_used(q.group_of(e)))
            .with_modes(q.round, q.overflow)
            .round_mantissa(self.weight.data()[e])
            == 0.0
    }

    /// Fractional bits of the bias per output lane: the largest fractional
    /// width among the lane's nonzero products, so the bias adds exactly into
    /// the accumulator. A lane without products uses its output width.
    pub fn bias_frac_bits(&self, input_q: &QuantizerState) -> Vec<i32> {
        let (n_in, n_out) = (self.n_in(), self.n_out());
        (0..n_out)
            .map(|k| {
                (0..n_in)
                    .filter_map(|j| {
                        let e = j * n_out + k;
                        let fw = self.weight_q.f_used(self.weight_q.group_of(e));
                        (!self.weight_is_zero(e)).then(|| fw + input_q.f_used(input_q.group_of(j)))
                    })
                    .max()
                    .unwrap_or_else(|| self.act_q.f_used(self.act_q.group_of(k)))
            })
            .collect()
    }

    /// Bias rounded to [`bias_frac_bits`](Self::bias_frac_bits).
    pub fn quantized_bias(&self, input_q: &QuantizerState) -> Vec<f64> {
        self.bias
            .iter()
            .zip(self.bias_frac_bits(input_q))
            .map(|(&b, f)| libm::ldexp(round_half_up(libm::ldexp(b, f)), -f))
            .collect()
    }
}

/// Construction settings for [`QModel::mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub weight_granularity: Granularity,
    pub act_granularity: Granularity,
    pub weight_f_init: f64,
    pub act_f_init: f64,
    /// Initial integer bits for SAT activations.
    pub act_i_init: f64,
    pub act_overflow: OverflowMode,
    pub act_round: RoundMode,
    /// Fixed fractional bits of the (frozen) input quantizer.
    pub input_frac_bits: i32,
    pub input_signed: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            weight_granularity: Granularity::PerParameter,
            act_granularity: Granularity::PerParameter,
            weight_f_init: 2.0,
            act_f_init: 4.0,
            act_i_init: 4.0,
            act_overflow: OverflowMode::Wrap,
            act_round: RoundMode::Rnd,
            input_frac_bits: 6,
            input_signed: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    /// Continuous bit-width surrogate; `trainable` is false for frozen quantizers
    /// and for `i` of WRAP quantizers.
    BitWidth { trainable: bool },
}

/// Tape handles for every parameter, in [`QModel::parameters`] order.
#[derive(Debug, Clone)]
pub struct Bindings {
    pub vars: Vec<Var>,
}

/// Feed-forward stack of [`QDense`] layers behind an input quantizer.
#[derive(Debug, Clone, PartialEq)]
pub struct QModel {
    pub input_q: QuantizerState,
    pub layers: Vec<QDense>,
}

impl QModel {
    /// MLP with ReLU on every hidden layer and a linear output layer.
    /// Weights use Glorot-uniform initialization.
    pub fn mlp<R: Rng>(sizes: &[usize], cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidConfig(format!("bad layer sizes {sizes:?}")));
        }
        let input_q = QuantizerState::new(
            Granularity::PerTensor,
            &[sizes[0]],
            cfg.input_signed,
            RoundMode::Rnd,
            OverflowMode::Wrap,
            cfg.input_frac_bits as f64,
            0.0,
        )
        .frozen();
        let mut layers = Vec::new();
        for (l, w) in sizes.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let hidden = l + 2 < sizes.len();
            let limit = libm::sqrt(6.0 / (n_in + n_out) as f64);
            let data = (0..n_in * n_out)
                .map(|_| rng.random_range(-limit..limit))
                .collect();
            let weight = Tensor::matrix(n_in, n_out, data)?;
            let weight_q = QuantizerState::new(
                cfg.weight_granularity,
                &[n_in, n_out],
                true,
                RoundMode::Rnd,
                OverflowMode::Wrap,
                cfg.weight_f_init,
                0.0,
            );
            let act_q = QuantizerState::new(
                cfg.act_granularity,
                &[n_out],
                !hidden,
                cfg.act_round,
                cfg.act_overflow,
                cfg.act_f_init,
                cfg.act_i_init,
            );
            layers.push(QDense {
                weight,
                bias: vec![0.0; n_out],
                weight_q,
                act_q,
                relu: hidden,
            });
        }
        Ok(Self { input_q, layers })
    }

    pub fn n_inputs(&self) -> usize {
        self.input_q.param_len()
    }

    pub fn n_outputs(&self) -> usize {
        self.layers.last().map_or(self.n_inputs(), QDense::n_out)
    }

    /// Quantizer feeding layer `l`.
    pub fn input_quantizer_of(&self, l: usize) -> &QuantizerState {
        if l == 0 {
            &self.input_q
        } else {
            &self.layers[l - 1].act_q
        }
    }

    /// All quantizers: input first, then weight and activation per layer.
    pub fn quantizers(&self) -> Vec<&QuantizerState> {
        let mut v = vec![&self.input_q];
        for layer in &self.layers {
            v.push(&layer.weight_q);
            v.push(&layer.act_q);
        }
        v
    }

    pub fn quantizers_mut(&mut self) -> Vec<&mut QuantizerState> {
        let mut v = vec![&mut self.input_q];
        for layer in &mut self.layers {
            v.push(&mut layer.weight_q);
            v.push(&mut layer.act_q);
        }
        v
    }

    pub fn reset_stats(&mut self) {
        self.quantizers_mut().into_iter().for_each(QuantizerState::reset_stats);
    }

    /// Parameter slices: input `f`, input `i`, then per layer weight, bias,
    /// weight `f`, weight `i`, activation `f`, activation `i`.
    pub fn parameters(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = vec![&self.input_q.f_cont, &self.input_q.i_cont];
        for l in &self.layers {
            v.push(l.weight.data());
            v.push(&l.bias);
            v.push(&l.weight_q.f_cont);
            v.push(&l.weight_q.i_cont);
            v.push(&l.act_q.f_cont);
            v.push(&l.act_q.i_cont);
        }
        v
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = vec![&mut self.input_q.f_cont, &mut self.input_q.i_cont];
        for l in &mut self.layers {
            v.push(l.weight.data_mut());
            v.push(&mut l.bias);
            v.push(&mut l.weight_q.f_cont);
            v.push(&mut l.weight_q.i_cont);
            v.push(&mut l.act_q.f_cont);
            v.push(&mut l.act_q.i_cont);
        }
        v
    }

    pub fn param_kinds(&self) -> Vec<ParamKind> {
        let bw = |q: &QuantizerState, is_i: bool| ParamKind::BitWidth {
            trainable: q.trainable && (!is_i || q.overflow == OverflowMode::Sat),
        };
        let mut v = vec![bw(&self.input_q, false), bw(&self.input_q, true)];
        for l in &self.layers {
            v.extend([
                ParamKind::Weight,
                ParamKind::Bias,
                bw(&l.weight_q, false),
                bw(&l.weight_q, true),
                bw(&l.act_q, false),
                bw(&l.act_q, true),
            ]);
        }
        v
    }

    /// Indices into [`Bindings::vars`] of `(f, i)` for each quantizer, in
    /// [`quantizers`](Self::quantizers) order.
    pub fn quantizer_var_indices(&self) -> Vec<(usize, usize)> {
        let mut v = vec![(0, 1)];
        for l in 0..self.layers.len() {
            let base = 2 + 6 * l;
            v.push((base + 2, base + 3));
            v.push((base + 4, base + 5));
        }
        v
    }

    /// Registers every parameter as a tape leaf.
    pub fn bind(&self, tape: &mut Tape) -> Bindings {
        let mut vars = vec![
            tape.leaf(Tensor::vector(self.input_q.f_cont.clone())),
            tape.leaf(Tensor::vector(self.input_q.i_cont.clone())),
        ];
        for l in &self.layers {
            vars.push(tape.leaf(l.weight.clone()));
            vars.push(tape.leaf(Tensor::vector(l.bias.clone())));
            vars.push(tape.leaf(Tensor::vector(l.weight_q.f_cont.clone())));
            vars.push(tape.leaf(Tensor::vector(l.weight_q.i_cont.clone())));
            vars.push(tape.leaf(Tensor::vector(l.act_q.f_cont.clone())));
            vars.push(tape.leaf(Tensor::vector(l.act_q.i_cont.clone())));
        }
        Bindings { vars }
    }

    /// Training-semantics forward of a batch (`rows x n_inputs`). With
    /// `update_stats` every quantizer's running maximum is updated.
    pub fn forward_train(
        &mut self,
        tape: &mut Tape,
        b: &Bindings,
        x: Tensor,
        update_stats: bool,
    ) -> Result<Var> {
        let (_, cols) = x.dims2()?;
        if cols != self.n_inputs() {
            return Err(Error::ShapeMismatch {
                op: "model_forward",
                detail: format!("{cols} input features, model expects {}", self.n_inputs()),
            });
        }
        if b.vars.len() != 2 + 6 * self.layers.len() {
            return Err(Error::ContractViolation(
                "bindings do not belong to this model".into(),
            ));
        }
        let xv = tape.leaf(x);
        let mut h = tape.quantize(xv, b.vars[0], b.vars[1], &mut self.input_q, update_stats)?;
        for l in 0..self.layers.len() {
            let v = &b.vars[2 + 6 * l..8 + 6 * l];
            let (prev, rest) = self.layers.split_at_mut(l);
            let input_q = if l == 0 { &self.input_q } else { &prev[l - 1].act_q };
            let layer = &mut rest[0];
            let wq = tape.quantize(v[0], v[2], v[3], &mut layer.weight_q, update_stats)?;
            let bq = tape.straight_through(v[1], layer.quantized_bias(input_q))?;
            let z = tape.matmul(h, wq)?;
            let mut z = tape.add_row(z, bq)?;
            if layer.relu {
                z = tape.relu(z);
            }
            h = tape.quantize(z, v[4], v[5], &mut layer.act_q, update_stats)?;
        }
        Ok(h)
    }

    /// Training-semantics forward without recording statistics.
    pub fn predict(&mut self, x: Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape);
        let out = self.forward_train(&mut tape, &b, x, false)?;
        Ok(tape.value(out).clone())
    }
}
