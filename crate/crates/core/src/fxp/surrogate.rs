//! Monte-Carlo check of the expected log-ratio behind the bit-width gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `|delta_{f+1}|` as a function of `|delta_f|`.
pub fn next_abs_error(f: i32, abs_delta: f64) -> f64 {
    let quarter = libm::ldexp(1.0, -f - 2);
    if abs_delta <= quarter {
        abs_delta
    } else {
        libm::ldexp(1.0, -f - 1) - abs_delta
    }
}

/// `ln(|delta_{f+1}| / |delta_f|)`.
pub fn log_ratio(f: i32, abs_delta: f64) -> f64 {
    libm::log(next_abs_error(f, abs_delta) / abs_delta)
}

/// Draws `|delta_f| ~ Uniform(0, 2^-f-1)`, excluding zero.
pub fn sample_abs_error<R: Rng>(f: i32, rng: &mut R) -> f64 {
    let half = libm::ldexp(1.0, -f - 1);
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u * half;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub samples: usize,
}

/// Estimates `E[ln(|delta_{f+1}| / |delta_f|)]`; the exact value is `-ln 2`.
pub fn expected_log_ratio_mc(f: i32, n_samples: usize, seed: u64) -> McEstimate {
    let n = n_samples.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..n {
        let r = log_ratio(f, sample_abs_error(f, &mut rng));
        sum += r;
        sum_sq += r * r;
    }
    let mean = sum / n as f64;
    let var = if n > 1 {
        ((sum_sq - sum * mean) / (n as f64 - 1.0)).max(0.0)
    } else {
        0.0
    };
    McEstimate {
        mean,
        std_error: libm::sqrt(var / n as f64),
        samples: n,
    }
}
