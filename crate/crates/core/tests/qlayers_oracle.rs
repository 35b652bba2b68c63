mod oracle;

use fxq_core::autodiff::{Tape, Tensor};
use fxq_core::fxp::{round_half_up, OverflowMode, QuantizerState, RoundMode};
use fxq_core::qlayers::{ModelConfig, QModel};
use fxq_core::resource::{total_loss, LossConfig};
use num_rational::BigRational;
use num_traits::{Signed, Zero};
use oracle::{pow2, rat, round_scaled};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn f_used(q: &QuantizerState, e: usize) -> i32 {
    round_half_up(q.f_cont[q.group_of(e)]) as i32
}

/// Training-semantics quantizer in exact arithmetic: round at `f`, clip only
/// under SAT.
fn train_q(x: &BigRational, q: &QuantizerState, e: usize) -> BigRational {
    let f = f_used(q, e);
    let v = BigRational::from_integer(round_scaled(x, f, q.round)) * pow2(-f);
    if q.overflow == OverflowMode::Wrap {
        return v;
    }
    let g = q.group_of(e);
    let i = round_half_up(q.i_cont[g]) as i32;
    let lo = if q.signed[g] { -pow2(i) } else { BigRational::zero() };
    let hi = pow2(i) - pow2(-f);
    v.clamp(lo, hi)
}

/// Exact forward of the whole model for one sample.
fn forward_exact(m: &QModel, x: &[f64]) -> Vec<BigRational> {
    let mut h: Vec<BigRational> = x.iter().enumerate().map(|(j, &v)| train_q(&rat(v), &m.input_q, j)).collect();
    let mut in_q = &m.input_q;
    for l in &m.layers {
        let (n_in, n_out) = (l.n_in(), l.n_out());
        let w: Vec<BigRational> = (0..n_in * n_out).map(|e| train_q(&rat(l.weight.data()[e]), &l.weight_q, e)).collect();
        h = (0..n_out)
            .map(|k| {
                let fb = (0..n_in)
                    .filter(|&j| !w[j * n_out + k].is_zero())
                    .map(|j| f_used(&l.weight_q, j * n_out + k) + f_used(in_q, j))
                    .max()
                    .unwrap_or_else(|| f_used(&l.act_q, k));
                let mut acc = BigRational::from_integer(round_scaled(&rat(l.bias[k]), fb, RoundMode::Rnd)) * pow2(-fb);
                for j in 0..n_in {
                    acc += &h[j] * &w[j * n_out + k];
                }
                if l.relu && acc.is_negative() {
                    acc = BigRational::zero();
                }
                train_q(&acc, &l.act_q, k)
            })
            .collect();
        in_q = &l.act_q;
    }
    h
}

fn random_model(sizes: &[usize], overflow: OverflowMode, seed: u64) -> QModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = ModelConfig {
        act_overflow: overflow,
        ..ModelConfig::default()
    };
    let mut m = QModel::mlp(sizes, &cfg, &mut rng).unwrap();
    for l in &mut m.layers {
        for f in l.weight_q.f_cont.iter_mut() {
            *f = rng.random_range(-1.0..7.0);
        }
        for f in l.act_q.f_cont.iter_mut() {
            *f = rng.random_range(0.0..6.0);
        }
        for i in l.act_q.i_cont.iter_mut() {
            *i = rng.random_range(-1.0..3.0);
        }
        for b in l.bias.iter_mut() {
            *b = rng.random_range(-1.0..1.0);
        }
    }
    m
}

fn check_against_oracle(m: &mut QModel, seed: u64, rows: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = m.n_inputs();
    let xs: Vec<f64> = (0..rows * n).map(|_| rng.random_range(-4.0..4.0)).collect();
    let out = m.predict(Tensor::matrix(rows, n, xs.clone()).unwrap()).unwrap();
    let n_out = m.n_outputs();
    for r in 0..rows {
        let want = forward_exact(m, &xs[r * n..(r + 1) * n]);
        for k in 0..n_out {
            assert_eq!(rat(out.data()[r * n_out + k]), want[k], "row {r} lane {k}");
        }
    }
}

#[test]
fn single_layer_matches_rational_oracle() {
    for seed in 0..10 {
        let mut m = random_model(&[6, 4], OverflowMode::Wrap, seed);
        check_against_oracle(&mut m, 100 + seed, 50);
    }
}

#[test]
fn three_layer_model_matches_rational_oracle() {
    for (seed, ov) in [(1, OverflowMode::Wrap), (2, OverflowMode::Sat), (3, OverflowMode::Wrap), (4, OverflowMode::Sat)] {
        let mut m = random_model(&[5, 7, 6, 3], ov, seed);
        check_against_oracle(&mut m, 200 + seed, 40);
    }
}

#[test]
fn pruned_weight_acts_as_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = Tensor::matrix(30, 5, (0..150).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap();
    for e in [0usize, 3, 8, 13, 20, 34] {
        let base = random_model(&[5, 7, 3], OverflowMode::Wrap, 9);
        let mut by_bits = base.clone();
        by_bits.layers[0].weight_q.f_cont[e] = -20.0;
        let mut by_value = base.clone();
        by_value.layers[0].weight.data_mut()[e] = 0.0;
        assert_eq!(by_bits.predict(x.clone()).unwrap(), by_value.predict(x.clone()).unwrap(), "weight {e}");
    }
}

/// Weight and bias gradients of one step with the given loss settings.
fn weight_grads(m: &QModel, x: &Tensor, y: &[usize], cfg: &LossConfig) -> Vec<Vec<f64>> {
    let mut m = m.clone();
    let mut tape = Tape::new();
    let b = m.bind(&mut tape);
    let out = m.forward_train(&mut tape, &b, x.clone(), true).unwrap();
    let base = tape.softmax_cross_entropy(out, y).unwrap();
    let loss = total_loss(&mut tape, base, &m, &b, cfg, 3).unwrap();
    tape.backward(loss).unwrap();
    (0..m.layers.len())
        .flat_map(|l| [2 + 6 * l, 3 + 6 * l])
        .map(|v| tape.grad(b.vars[v]).unwrap().to_vec())
        .collect()
}

#[test]
fn regularizers_leave_weight_gradients_unchanged() {
    let m = random_model(&[5, 7, 6, 3], OverflowMode::Wrap, 21);
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let x = Tensor::matrix(16, 5, (0..80).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap();
    let y: Vec<usize> = (0..16).map(|i| i % 3).collect();
    let plain = LossConfig {
        beta_init: 0.0,
        beta_final: 0.0,
        gamma: 0.0,
        total_steps: 10,
    };
    let heavy = LossConfig {
        beta_init: 1e-2,
        beta_final: 1.0,
        gamma: 0.5,
        total_steps: 10,
    };
    assert_eq!(weight_grads(&m, &x, &y, &plain), weight_grads(&m, &x, &y, &heavy));
}
