mod oracle;

use fxq_core::autodiff::{Tape, Tensor};
use fxq_core::fxp::{FixedPointFormat, Granularity, OverflowMode};
use fxq_core::qlayers::{DeployLayer, DeployModel, ModelConfig, QModel};
use fxq_core::resource::{
    bitwidth_l1, calibrate, ebops_exact, ebops_of_deployed, ebops_surrogate_value, freeze, lut_from_ebops,
    total_loss, CalibrationResult, LossConfig,
};
use num_rational::BigRational;
use oracle::{deploy_forward_exact, ebops_bruteforce, rat};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn fmt(s: bool, i: i32, f: i32) -> FixedPointFormat {
    FixedPointFormat::new(s, i, f)
}

#[test]
fn two_by_two_dense_hand_count() {
    // 4-bit weights, 8-bit inputs, 10-bit biases: 4 products of 4*8 and two
    // bias adds onto a 12-bit accumulator.
    let m = DeployModel {
        input_fmt: vec![fmt(true, 3, 4); 2],
        layers: vec![DeployLayer {
            n_in: 2,
            n_out: 2,
            weight_fmt: vec![fmt(true, 1, 2); 4],
            weight_mantissa: vec![3, -5, 7, 1],
            bias_fmt: vec![fmt(true, 3, 6); 2],
            bias_mantissa: vec![100, -3],
            act_fmt: vec![fmt(true, 4, 4); 2],
            relu: false,
        }],
    };
    let r = ebops_of_deployed(&m);
    assert_eq!((r.mul_ebops, r.add_ebops, r.total), (128, 24, 152));
    assert_eq!(ebops_bruteforce(&m), 152);
}

fn random_data(rng: &mut ChaCha8Rng, rows: usize, n: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..rows).map(|_| (0..n).map(|_| rng.random_range(-scale..scale)).collect()).collect()
}

/// Random model with randomized bit-widths, calibrated on random data.
fn calibrated_model(seed: u64, sizes: &[usize], act_overflow: OverflowMode) -> (QModel, CalibrationResult, Vec<Vec<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gran = [Granularity::PerParameter, Granularity::PerChannel, Granularity::PerTensor];
    let cfg = ModelConfig {
        weight_granularity: gran[rng.random_range(0..3)],
        act_granularity: gran[rng.random_range(0..3)],
        act_overflow,
        ..ModelConfig::default()
    };
    let mut m = QModel::mlp(sizes, &cfg, &mut rng).unwrap();
    for l in &mut m.layers {
        l.weight_q.f_cont.iter_mut().for_each(|f| *f = rng.random_range(-2.0..6.0));
        l.act_q.f_cont.iter_mut().for_each(|f| *f = rng.random_range(-1.0..6.0));
        l.act_q.i_cont.iter_mut().for_each(|i| *i = rng.random_range(-1.0..4.0));
        l.bias.iter_mut().for_each(|b| *b = rng.random_range(-1.0..1.0));
    }
    let data = random_data(&mut rng, 64, sizes[0], 3.0);
    let calib = calibrate(&mut m, data.iter().map(Vec::as_slice)).unwrap();
    (m, calib, data)
}

#[test]
fn exact_report_matches_bruteforce_enumeration() {
    for seed in 0..50 {
        let sizes = [4 + seed as usize % 5, 6, 5, 3];
        let ov = if seed % 2 == 0 { OverflowMode::Wrap } else { OverflowMode::Sat };
        let (m, calib, _) = calibrated_model(seed, &sizes, ov);
        let d = freeze(&m, &calib).unwrap();
        let r = ebops_exact(&m, &calib).unwrap();
        assert_eq!(r.total, ebops_bruteforce(&d), "seed {seed}");
        assert_eq!(r.total, r.mul_ebops + r.add_ebops);
        assert_eq!(r.total, r.layers.iter().map(|l| l.total()).sum::<u64>());
        assert_eq!(r.lut_pred, lut_from_ebops(r.total as f64));
    }
}

#[test]
fn surrogate_equals_exact_with_shared_stats() {
    for seed in 0..30 {
        let ov = if seed % 3 == 0 { OverflowMode::Sat } else { OverflowMode::Wrap };
        let (m, calib, _) = calibrated_model(100 + seed, &[5, 8, 4], ov);
        let s = ebops_surrogate_value(&m).unwrap();
        assert_eq!(s.value, ebops_exact(&m, &calib).unwrap().total as f64, "seed {seed}");
    }
}

#[test]
fn surrogate_is_monotone_in_every_f() {
    for seed in 0..10 {
        let (m, _, _) = calibrated_model(200 + seed, &[5, 6, 3], OverflowMode::Wrap);
        let base = ebops_surrogate_value(&m).unwrap().value;
        for q in 0..m.quantizers().len() {
            for g in 0..m.quantizers()[q].groups() {
                let mut up = m.clone();
                up.quantizers_mut()[q].f_cont[g] += 1.0;
                let v = ebops_surrogate_value(&up).unwrap().value;
                assert!(v >= base, "seed {seed} quantizer {q} group {g}: {v} < {base}");
            }
        }
    }
}

/// Widths per quantizer group in `QModel::quantizers` order.
fn group_widths(calib: &CalibrationResult) -> Vec<Vec<f64>> {
    let w = |v: &[FixedPointFormat]| v.iter().map(|f| f.width() as f64).collect::<Vec<_>>();
    let mut out = vec![w(&calib.input)];
    for l in &calib.layers {
        out.push(w(&l.weight));
        out.push(w(&l.act));
    }
    out
}

/// EBOPs as a function of real-valued group widths. The sets of products and
/// bias adds, and the bias widths, are taken from the frozen model.
fn smoothed(m: &QModel, d: &DeployModel, bits: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for (l, (layer, dl)) in m.layers.iter().zip(&d.layers).enumerate() {
        let a_q = m.quantizers()[2 * l];
        let (a_bits, w_bits) = (&bits[2 * l], &bits[2 * l + 1]);
        for k in 0..dl.n_out {
            let mut acc: f64 = 0.0;
            for j in 0..dl.n_in {
                let e = j * dl.n_out + k;
                let bw = w_bits[layer.weight_q.group_of(e)];
                let ba = a_bits[a_q.group_of(j)];
                if dl.weight_mantissa[e] == 0 || bw <= 0.0 || ba <= 0.0 {
                    continue;
                }
                total += bw * ba;
                acc = acc.max(bw + ba);
            }
            if dl.bias_mantissa[k] != 0 {
                total += acc.max(dl.bias_fmt[k].width() as f64);
            }
        }
    }
    total
}

#[test]
fn surrogate_gradient_is_a_subgradient_of_smoothed_ebops() {
    const H: f64 = 1e-3;
    let (mut checked, mut smooth) = (0, 0);
    for seed in 0..20 {
        let ov = if seed % 2 == 0 { OverflowMode::Wrap } else { OverflowMode::Sat };
        let (m, calib, _) = calibrated_model(300 + seed, &[4, 6, 5, 3], ov);
        let d = freeze(&m, &calib).unwrap();
        let bits = group_widths(&calib);
        let s = ebops_surrogate_value(&m).unwrap();
        let base = smoothed(&m, &d, &bits);
        assert!((base - s.value).abs() < 1e-9);
        for (q, quant) in m.quantizers().iter().enumerate() {
            for g in 0..quant.groups() {
                let live = bits[q][g] > 0.0;
                let shifted = |h: f64| {
                    let mut b = bits.clone();
                    if live {
                        b[q][g] += h;
                    }
                    smoothed(&m, &d, &b)
                };
                let right = (shifted(H) - base) / H;
                let left = (base - shifted(-H)) / H;
                let (lo, hi) = (left.min(right) - 1e-6, left.max(right) + 1e-6);
                let gf = s.grads[q].0[g];
                assert!(gf >= lo && gf <= hi, "seed {seed} q {q} g {g}: {gf} not in [{left}, {right}]");
                if (left - right).abs() < 1e-6 {
                    assert!((gf - right).abs() < 1e-6);
                    smooth += 1;
                }
                let gi = s.grads[q].1[g];
                if quant.overflow == OverflowMode::Sat {
                    assert!(gi >= lo && gi <= hi);
                } else {
                    assert_eq!(gi, 0.0);
                }
                checked += 1;
            }
        }
    }
    // Most groups sit away from a kink of the bias-add maximum.
    assert!(smooth * 10 >= checked * 8, "{smooth} of {checked} groups differentiable");
}

#[test]
fn bitwidth_penalty_matches_hand_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut m = QModel::mlp(&[1, 1], &ModelConfig::default(), &mut rng).unwrap();
    // Input: f = 6, max 0.5 -> mantissa 32 -> 7 signed bits.
    m.input_q.running_max_abs[0] = 0.5;
    m.input_q.stats_populated = true;
    // Weight 0.75 at f = 2 -> mantissa 3 -> 3 signed bits.
    let l = &mut m.layers[0];
    l.weight.data_mut()[0] = 0.75;
    l.weight_q.f_cont[0] = 2.0;
    // Activation: f = 4, max 1.3 -> mantissa 21 -> 6 signed bits.
    l.act_q.signed[0] = true;
    l.act_q.f_cont[0] = 4.0;
    l.act_q.running_max_abs[0] = 1.3;
    l.act_q.stats_populated = true;
    let mut tape = Tape::new();
    let b = m.bind(&mut tape);
    let sum = bitwidth_l1(&mut tape, &m, &b).unwrap();
    assert_eq!(tape.value(sum).data(), &[16.0]);
    let base = tape.leaf(Tensor::scalar(0.25));
    let cfg = LossConfig {
        beta_init: 0.0,
        beta_final: 0.0,
        gamma: 0.5,
        total_steps: 1,
    };
    let loss = total_loss(&mut tape, base, &m, &b, &cfg, 0).unwrap();
    assert_eq!(tape.value(loss).data(), &[0.25 + 0.5 * 16.0]);
}

#[test]
fn calibration_replay_has_no_overflow() {
    for seed in 0..20 {
        let ov = if seed % 2 == 0 { OverflowMode::Wrap } else { OverflowMode::Sat };
        let (mut m, calib, data) = calibrated_model(400 + seed, &[5, 7, 6, 3], ov);
        let d = freeze(&m, &calib).unwrap();
        let n = d.n_inputs();
        let flat: Vec<f64> = data.iter().flatten().copied().collect();
        let out = m.predict(Tensor::matrix(data.len(), n, flat).unwrap()).unwrap();
        let k = d.n_outputs();
        for (r, x) in data.iter().enumerate() {
            let xr: Vec<BigRational> = x.iter().map(|&v| rat(v)).collect();
            let want = deploy_forward_exact(&d, &xr);
            for o in 0..k {
                assert_eq!(rat(out.data()[r * k + o]), want[o], "seed {seed} row {r}");
            }
        }
    }
}

#[test]
fn lut_prediction_orders_like_ebops() {
    let mut pts: Vec<(u64, f64)> = (0..40)
        .map(|seed| {
            let (m, calib, _) = calibrated_model(500 + seed, &[6, 6, 3], OverflowMode::Wrap);
            let r = ebops_exact(&m, &calib).unwrap();
            (r.total, r.lut_pred)
        })
        .collect();
    pts.sort_by_key(|p| p.0);
    for w in pts.windows(2) {
        if w[1].0 > w[0].0 {
            assert!(w[1].1 > w[0].1);
        }
    }
    assert!((lut_from_ebops(1000.0) - 901.571).abs() < 1e-3);
}

#[test]
fn pruned_everything_costs_nothing() {
    let (mut m, _, data) = calibrated_model(7, &[4, 5, 2], OverflowMode::Wrap);
    for l in &mut m.layers {
        l.weight_q.f_cont.iter_mut().for_each(|f| *f = -30.0);
        l.bias.iter_mut().for_each(|b| *b = 0.0);
    }
    let calib = calibrate(&mut m, data.iter().map(Vec::as_slice)).unwrap();
    assert_eq!(ebops_exact(&m, &calib).unwrap().total, 0);
    assert_eq!(ebops_surrogate_value(&m).unwrap().value, 0.0);
}
