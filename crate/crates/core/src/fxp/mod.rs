//! Fixed-point formats and the differentiable quantizer.
//!
//! A format `(s, i, f)` represents `k * 2^-f` for integers
//! `-s * 2^(i+f) <= k <= 2^(i+f) - 1`; its width is `s + i + f`. A width of
//! zero or less maps everything to zero, which is how parameters get pruned.

mod format;
mod quantizer;
mod surrogate;

pub use format::{round_half_up, FixedPointFormat, OverflowMode, RoundMode};
pub use quantizer::{
    quantize_backward, quantize_deploy, quantize_train_forward, ClipSide, Granularity,
    QuantGradBundle, QuantGrads, QuantizerState,
};
pub use surrogate::{expected_log_ratio_mc, log_ratio, next_abs_error, sample_abs_error, McEstimate};

/// Bits needed for an unsigned magnitude: smallest `n` with `m <= 2^n - 1`.
pub fn magnitude_bits(m: u128) -> i32 {
    (128 - m.leading_zeros()) as i32
}

/// Smallest `n = i + f` such that mantissa `k` fits a format with sign bit
/// `signed`. Negative mantissas use the extra code point of two's complement.
pub fn integer_span_for(k: i128, signed: bool) -> i32 {
    if k >= 0 {
        magnitude_bits(k as u128)
    } else {
        debug_assert!(signed, "negative mantissa in an unsigned format");
        // -k <= 2^n
        let m = k.unsigned_abs();
        magnitude_bits(m - 1)
    }
}
