mod oracle;

use fxq_core::fxp::{
    expected_log_ratio_mc, next_abs_error, quantize_backward, quantize_deploy, quantize_train_forward,
    FixedPointFormat, Granularity, OverflowMode, QuantizerState, RoundMode,
};
use fxq_core::resource::Csd;
use oracle::{quantize_exact, rat, to_f64};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn any_format() -> impl Strategy<Value = FixedPointFormat> {
    (any::<bool>(), -2i32..=8, -2i32..=12, any::<bool>(), any::<bool>()).prop_map(|(s, i, f, rnd, wrap)| {
        FixedPointFormat::new(s, i, f).with_modes(
            if rnd { RoundMode::Rnd } else { RoundMode::Trn },
            if wrap { OverflowMode::Wrap } else { OverflowMode::Sat },
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4000))]

    #[test]
    fn deploy_matches_rational_oracle(x in -600.0f64..600.0, fmt in any_format()) {
        let got = fmt.quantize(x);
        prop_assert_eq!(rat(got), quantize_exact(&rat(x), &fmt));
    }

    #[test]
    fn output_is_representable(x in -1e4f64..1e4, fmt in any_format()) {
        let q = fmt.quantize(x);
        let k = q * 2f64.powi(fmt.frac_bits);
        prop_assert_eq!(k.fract(), 0.0);
        let (lo, hi) = fmt.mantissa_range();
        if fmt.is_pruned() {
            prop_assert_eq!(q, 0.0);
        } else {
            prop_assert!(k >= lo as f64 && k <= hi as f64);
        }
    }

    #[test]
    fn idempotent(x in -1e4f64..1e4, fmt in any_format()) {
        let q = fmt.quantize(x);
        prop_assert_eq!(fmt.quantize(q), q);
    }

    #[test]
    fn rnd_error_bound_in_range(u in 0.0f64..=1.0, s: bool, i in 0i32..=8, f in -2i32..=12) {
        let fmt = FixedPointFormat::new(s, i, f);
        let (lo, hi) = fmt.value_range();
        let x = lo + u * (hi - lo);
        prop_assert!((x - fmt.quantize(x)).abs() <= 2f64.powi(-f - 1));
    }

    #[test]
    fn error_recurrence_is_exact(x in -64.0f64..64.0, f in -2i32..=10) {
        let d = |f: i32| x - FixedPointFormat::new(true, 8, f).round_mantissa(x) * 2f64.powi(-f);
        prop_assert_eq!(d(f + 1).abs(), next_abs_error(f, d(f).abs()));
    }

    #[test]
    fn csd_round_trip_wide(c in -(1i128 << 20)..(1i128 << 20)) {
        let d = Csd::encode(c);
        prop_assert_eq!(d.value(), c);
        prop_assert!(d.is_canonical());
        prop_assert!(d.nonzero_digits() as u32 <= c.unsigned_abs().count_ones());
    }
}

fn state(overflow: OverflowMode, f: f64, i: f64, n: usize) -> QuantizerState {
    QuantizerState::new(Granularity::PerParameter, &[n], true, RoundMode::Rnd, overflow, f, i)
}

#[test]
fn rnd_error_is_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let f = 3;
    let fmt = FixedPointFormat::new(true, 10, f);
    let half = 2f64.powi(-f - 1);
    let n = 200_000;
    const BINS: usize = 16;
    let mut counts = [0usize; BINS];
    let mut sum = 0.0;
    for _ in 0..n {
        let x: f64 = rng.random_range(-500.0..500.0);
        let d = x - fmt.quantize(x);
        assert!(d > -half && d <= half, "{d}");
        sum += d;
        let b = (((d + half) / (2.0 * half)) * BINS as f64) as usize;
        counts[b.min(BINS - 1)] += 1;
    }
    // Mean within 3 sigma of zero; sigma of a uniform on a width-2h interval is h/sqrt(3).
    let sigma = half / 3f64.sqrt() / (n as f64).sqrt();
    assert!((sum / n as f64).abs() < 3.0 * sigma);
    // Chi-square with 15 degrees of freedom; 37.7 is the 0.001 quantile.
    let e = n as f64 / BINS as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
    assert!(chi2 < 37.7, "chi2 = {chi2}");
}

#[test]
fn trn_error_is_biased_positive() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let fmt = FixedPointFormat::new(true, 10, 2).with_modes(RoundMode::Trn, OverflowMode::Wrap);
    let n = 50_000;
    let mean: f64 = (0..n)
        .map(|_| {
            let x: f64 = rng.random_range(-300.0..300.0);
            x - fmt.quantize(x)
        })
        .sum::<f64>()
        / n as f64;
    assert!(mean > 0.0);
    assert!((mean - 0.125).abs() < 0.01, "{mean}");
}

#[test]
fn ste_and_surrogate_gradient_elementwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let n = 10_000;
    let x: Vec<f64> = (0..n).map(|_| rng.random_range(-20.0..20.0)).collect();
    let up: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let mut st = state(OverflowMode::Wrap, 0.0, 0.0, n);
    for f in st.f_cont.iter_mut() {
        *f = rng.random_range(-2.0..8.0);
    }
    let (q, bundle) = quantize_train_forward(&x, &mut st, false).unwrap();
    let g = quantize_backward(&bundle, &up, &st).unwrap();
    for e in 0..n {
        assert_eq!(g.input[e], up[e]);
        let delta = x[e] - q[e];
        let want = up[e] * std::f64::consts::LN_2 * delta;
        let tol = 1e-12 * want.abs().max(f64::MIN_POSITIVE);
        assert!((g.f[e] - want).abs() <= tol, "{e}: {} vs {want}", g.f[e]);
    }
}

#[test]
fn ste_passes_unclipped_sat_elements() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let n = 2000;
    let x: Vec<f64> = (0..n).map(|_| rng.random_range(-6.0..6.0)).collect();
    let mut st = state(OverflowMode::Sat, 3.0, 2.0, n);
    let (_, bundle) = quantize_train_forward(&x, &mut st, false).unwrap();
    let up = vec![0.75; n];
    let g = quantize_backward(&bundle, &up, &st).unwrap();
    let (lo, hi) = (-4.0, 4.0 - 0.125);
    for e in 0..n {
        let r = fxq_core::fxp::round_half_up(x[e] * 8.0) / 8.0;
        let inside = r >= lo && r <= hi;
        assert_eq!(g.input[e], if inside { 0.75 } else { 0.0 }, "x = {}", x[e]);
    }
}

#[test]
fn zero_upstream_gives_zero_gradients() {
    let x = [0.3, -7.0, 2.2, 9.0];
    let mut st = state(OverflowMode::Sat, 1.0, 1.0, 4);
    let (_, bundle) = quantize_train_forward(&x, &mut st, false).unwrap();
    let g = quantize_backward(&bundle, &[0.0; 4], &st).unwrap();
    assert!(g.input.iter().chain(&g.f).chain(&g.i).all(|&v| v == 0.0));
}

#[test]
fn log_ratio_expectation_is_minus_ln2() {
    for f in [0, 3] {
        let e = expected_log_ratio_mc(f, 200_000, 99 + f as u64);
        assert!((e.mean + std::f64::consts::LN_2).abs() < 3.0 * e.std_error, "{f}: {e:?}");
    }
}

#[test]
fn deploy_vector_api_matches_scalar() {
    let fmt = FixedPointFormat::new(false, 2, 3).with_modes(RoundMode::Trn, OverflowMode::Sat);
    let xs = [-1.0, 0.26, 3.99, 7.0, f64::NAN];
    let got = quantize_deploy(&xs, &fmt);
    let want: Vec<f64> = xs.iter().map(|&x| if x.is_nan() { 0.0 } else { to_f64(&quantize_exact(&rat(x), &fmt)) }).collect();
    assert_eq!(got, want);
}
