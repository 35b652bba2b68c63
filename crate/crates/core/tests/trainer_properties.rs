use fxq_core::autodiff::{Tape, Tensor};
use fxq_core::fxp::OverflowMode;
use fxq_core::qlayers::{ModelConfig, QModel};
use fxq_core::resource::LossConfig;
use fxq_core::trainer::{train, Dataset, ParetoPoint, ParetoSet, TrainConfig, Targets};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
struct Pt {
    metric: f64,
    ebops: f64,
    id: usize,
    label: String,
}

impl ParetoPoint for Pt {
    fn metric(&self) -> f64 {
        self.metric
    }
    fn ebops(&self) -> f64 {
        self.ebops
    }
    fn tie_key(&self) -> (usize, &str) {
        (self.id, &self.label)
    }
}

fn points() -> impl Strategy<Value = Vec<Pt>> {
    prop::collection::vec((0u8..6, 0u8..8, 0u8..2), 0..40).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(id, (m, e, l))| Pt {
                metric: m as f64 / 5.0,
                ebops: e as f64 * 100.0,
                id,
                label: ["a", "b"][l as usize].to_string(),
            })
            .collect()
    })
}

/// Front of `all` by exhaustive comparison; among equal objectives the
/// smallest key survives.
fn front(all: &[Pt]) -> Vec<Pt> {
    let mut out: Vec<Pt> = all
        .iter()
        .filter(|p| {
            !all.iter().any(|q| {
                let weakly = q.metric >= p.metric && q.ebops <= p.ebops;
                let strictly = q.metric > p.metric || q.ebops < p.ebops;
                weakly && (strictly || (q.id, &q.label) < (p.id, &p.label))
            })
        })
        .cloned()
        .collect();
    out.sort_by(|a, b| a.ebops.total_cmp(&b.ebops));
    out
}

fn build(pts: &[Pt]) -> ParetoSet<Pt> {
    let mut s = ParetoSet::new();
    for p in pts {
        s.insert(p.clone());
    }
    s
}

proptest! {
    #[test]
    fn front_is_maintained_after_every_insert(pts in points()) {
        let mut s = ParetoSet::new();
        for (n, p) in pts.iter().enumerate() {
            s.insert(p.clone());
            let m = s.members();
            for a in m {
                for b in m {
                    prop_assert!(!a.dominates(b));
                }
            }
            prop_assert!(m.windows(2).all(|w| w[0].ebops < w[1].ebops));
            prop_assert_eq!(m.to_vec(), front(&pts[..=n]));
        }
    }

    #[test]
    fn merge_is_commutative_and_associative(a in points(), b in points(), c in points()) {
        let shift = |v: Vec<Pt>, k: usize| -> Vec<Pt> {
            v.into_iter().map(|mut p| { p.id += k; p }).collect()
        };
        let (b, c) = (shift(b, 100), shift(c, 200));
        let (sa, sb, sc) = (build(&a), build(&b), build(&c));
        prop_assert_eq!(sa.clone().merge(sb.clone()), sb.clone().merge(sa.clone()));
        let left = sa.clone().merge(sb.clone()).merge(sc.clone());
        let right = sa.merge(sb.merge(sc));
        prop_assert_eq!(&left, &right);
        let all: Vec<Pt> = a.into_iter().chain(b).chain(c).collect();
        prop_assert_eq!(left.members().to_vec(), front(&all));
    }

    #[test]
    fn beta_is_monotone_and_log_linear(init_exp in -9.0f64..-3.0, decades in 0.0f64..4.0, steps in 1usize..500) {
        let cfg = LossConfig {
            beta_init: 10f64.powf(init_exp),
            beta_final: 10f64.powf(init_exp + decades),
            gamma: 0.0,
            total_steps: steps,
        };
        let mut last = 0.0;
        for t in 0..=steps + 3 {
            let b = cfg.beta_at(t);
            prop_assert!(b >= last);
            last = b;
        }
        let slope = decades * std::f64::consts::LN_10 / steps as f64;
        for t in 0..steps {
            let d = cfg.beta_at(t + 1).ln() - cfg.beta_at(t).ln();
            prop_assert!((d - slope).abs() < 1e-9);
        }
    }
}

#[test]
fn evicts_dominated_checkpoint() {
    let mk = |metric, ebops, id| Pt { metric, ebops, id, label: String::new() };
    let s = build(&[mk(0.90, 500.0, 0), mk(0.88, 600.0, 1)]);
    assert_eq!(s.members(), &[mk(0.90, 500.0, 0)]);
    let s = build(&[mk(0.88, 600.0, 1), mk(0.90, 500.0, 0)]);
    assert_eq!(s.members(), &[mk(0.90, 500.0, 0)]);
}

fn blobs(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::new();
    let mut y = Vec::new();
    for i in 0..n {
        let c = i % 3;
        let centre = [[2.0, 0.0, 0.0, 1.0], [-1.0, 2.0, 0.0, 0.0], [0.0, -1.0, 2.0, -1.0]][c];
        x.extend(centre.iter().map(|m| m + rng.random_range(-1.0..1.0)));
        y.push(c);
    }
    Dataset::new(4, x, Targets::Classes { labels: y, n_classes: 3 }).unwrap()
}

#[test]
fn training_schedules_stay_in_range() {
    let (tr, va) = blobs(300, 1).split(0.2, 2).unwrap();
    let model = QModel::mlp(&[4, 8, 3], &ModelConfig::default(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let cfg = TrainConfig {
        epochs: 8,
        batch_size: 32,
        loss: LossConfig { beta_init: 1e-6, beta_final: 1e-3, gamma: 1e-8, total_steps: 1 },
        ..TrainConfig::default()
    };
    let out = train(model, &tr, &va, &cfg).unwrap();
    assert_eq!(out.history.len(), 8);
    for w in out.history.windows(2) {
        assert!(w[1].beta >= w[0].beta);
        assert!(w[1].step > w[0].step);
    }
    for h in &out.history {
        assert!(h.lr >= cfg.lr_min && h.lr <= cfg.adam.lr);
        assert!(h.beta >= 1e-6 && h.beta <= 1e-3);
    }
    let m = out.pareto.members();
    assert!(!m.is_empty());
    for a in m {
        for b in m {
            assert!(!a.dominates(b));
        }
    }
}

/// Softmax cross-entropy gradients of a float `n_in -> hidden (relu) -> n_out`
/// MLP by hand-written backpropagation.
fn float_grads(w0: &[f64], b0: &[f64], w1: &[f64], b1: &[f64], x: &[f64], y: &[usize], dims: (usize, usize, usize)) -> [Vec<f64>; 4] {
    let (ni, nh, no) = dims;
    let rows = y.len();
    let mut g = [vec![0.0; w0.len()], vec![0.0; nh], vec![0.0; w1.len()], vec![0.0; no]];
    for r in 0..rows {
        let xr = &x[r * ni..(r + 1) * ni];
        let pre: Vec<f64> = (0..nh).map(|h| b0[h] + (0..ni).map(|i| xr[i] * w0[i * nh + h]).sum::<f64>()).collect();
        let hid: Vec<f64> = pre.iter().map(|&v| v.max(0.0)).collect();
        let z: Vec<f64> = (0..no).map(|o| b1[o] + (0..nh).map(|h| hid[h] * w1[h * no + o]).sum::<f64>()).collect();
        let mx = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = z.iter().map(|v| (v - mx).exp()).sum();
        let dz: Vec<f64> = (0..no)
            .map(|o| ((z[o] - mx).exp() / sum - (o == y[r]) as u8 as f64) / rows as f64)
            .collect();
        for o in 0..no {
            g[3][o] += dz[o];
            for h in 0..nh {
                g[2][h * no + o] += hid[h] * dz[o];
            }
        }
        for h in 0..nh {
            if pre[h] <= 0.0 {
                continue;
            }
            let dh: f64 = (0..no).map(|o| w1[h * no + o] * dz[o]).sum();
            g[1][h] += dh;
            for i in 0..ni {
                g[0][i * nh + h] += xr[i] * dh;
            }
        }
    }
    g
}

#[test]
fn wide_formats_follow_float_baseline() {
    let mcfg = ModelConfig {
        weight_f_init: 24.0,
        act_f_init: 24.0,
        act_i_init: 16.0,
        act_overflow: OverflowMode::Sat,
        input_frac_bits: 24,
        ..ModelConfig::default()
    };
    let (ni, nh, no) = (4, 7, 3);
    let mut m = QModel::mlp(&[ni, nh, no], &mcfg, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for l in &mut m.layers {
        l.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.3..0.3));
    }
    let data = blobs(24, 10);
    let x = data.features.clone();
    let Targets::Classes { labels, .. } = &data.targets else { unreachable!() };
    let mut tape = Tape::new();
    let b = m.bind(&mut tape);
    let out = m.forward_train(&mut tape, &b, Tensor::matrix(24, ni, x.clone()).unwrap(), true).unwrap();
    let loss = tape.softmax_cross_entropy(out, labels).unwrap();
    tape.backward(loss).unwrap();
    let (l0, l1) = (&m.layers[0], &m.layers[1]);
    let want = float_grads(l0.weight.data(), &l0.bias, l1.weight.data(), &l1.bias, &x, labels, (ni, nh, no));
    for (slot, w) in [2usize, 3, 8, 9].into_iter().zip(&want) {
        let got = tape.grad(b.vars[slot]).unwrap();
        for (g, w) in got.iter().zip(w) {
            assert!((g - w).abs() <= 1e-6 * (1.0 + w.abs()), "slot {slot}: {g} vs {w}");
        }
    }
}
