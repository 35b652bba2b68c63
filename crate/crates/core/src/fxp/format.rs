use alloc::string::{String, ToString};
use core::fmt;
use core::str::FromStr;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RoundMode {
    /// Round to nearest, ties toward +inf: `floor(x + 0.5)`.
    Rnd,
    /// Truncate toward -inf: `floor(x)`.
    Trn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OverflowMode {
    /// Keep the low `w` bits (modulo reduction into the range).
    Wrap,
    /// Clip to the range bounds.
    Sat,
}

/// `floor(x + 0.5)` computed without the double rounding of `x + 0.5`.
pub fn round_half_up(x: f64) -> f64 {
    let fl = libm::floor(x);
    if x - fl >= 0.5 {
        fl + 1.0
    } else {
        fl
    }
}

/// Fixed-point quantizer configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FixedPointFormat {
    pub signed: bool,
    /// Integer bits excluding the sign bit. May be negative.
    pub int_bits: i32,
    /// Fractional bits. May be negative (steps coarser than one).
    pub frac_bits: i32,
    pub round: RoundMode,
    pub overflow: OverflowMode,
}

impl FixedPointFormat {
    pub fn new(signed: bool, int_bits: i32, frac_bits: i32) -> Self {
        Self {
            signed,
            int_bits,
            frac_bits,
            round: RoundMode::Rnd,
            overflow: OverflowMode::Wrap,
        }
    }

    pub fn with_modes(mut self, round: RoundMode, overflow: OverflowMode) -> Self {
        self.round = round;
        self.overflow = overflow;
        self
    }

    /// Format with zero width at the given fractional position.
    pub fn pruned(signed: bool, frac_bits: i32) -> Self {
        Self::new(signed, -(signed as i32) - frac_bits, frac_bits)
    }

    /// `s + i + f`, possibly negative.
    pub fn raw_width(&self) -> i64 {
        self.signed as i64 + self.int_bits as i64 + self.frac_bits as i64
    }

    /// Total width floored at zero.
    pub fn width(&self) -> u32 {
        self.raw_width().max(0) as u32
    }

    pub fn is_pruned(&self) -> bool {
        self.raw_width() <= 0
    }

    /// Inclusive mantissa range. `(0, 0)` for pruned formats.
    pub fn mantissa_range(&self) -> (i128, i128) {
        if self.is_pruned() {
            return (0, 0);
        }
        let span = (self.int_bits as i64 + self.frac_bits as i64) as u32;
        let hi = (1i128 << span) - 1;
        let lo = if self.signed { -(1i128 << span) } else { 0 };
        (lo, hi)
    }

    /// Real-valued bounds `[-s * 2^i, 2^i - 2^-f]`.
    pub fn value_range(&self) -> (f64, f64) {
        let (lo, hi) = self.mantissa_range();
        (self.value_of(lo), self.value_of(hi))
    }

    pub fn step(&self) -> f64 {
        libm::ldexp(1.0, -self.frac_bits)
    }

    pub fn value_of(&self, mantissa: i128) -> f64 {
        libm::ldexp(mantissa as f64, -self.frac_bits)
    }

    /// Rounded, unreduced mantissa as an exact integer-valued `f64`.
    fn round_scaled(&self, x: f64) -> f64 {
        let y = libm::ldexp(x, self.frac_bits);
        match self.round {
            RoundMode::Rnd => round_half_up(y),
            RoundMode::Trn => libm::floor(y),
        }
    }

    /// Applies the overflow mode to an integer-valued `f64` mantissa.
    fn reduce_scaled(&self, k: f64) -> f64 {
        let (lo, hi) = self.mantissa_range();
        let (lo, hi) = (lo as f64, hi as f64);
        match self.overflow {
            OverflowMode::Sat => k.max(lo).min(hi),
            OverflowMode::Wrap => {
                if k >= lo && k <= hi {
                    return k;
                }
                let modulus = libm::ldexp(1.0, self.width() as i32);
                let mut r = libm::fmod(k - lo, modulus);
                if r < 0.0 {
                    r += modulus;
                }
                r + lo
            }
        }
    }

    /// Deployment quantization. NaN and infinities map to zero under WRAP;
    /// SAT clips infinities to the bounds.
    pub fn quantize(&self, x: f64) -> f64 {
        if self.is_pruned() || x.is_nan() {
            return 0.0;
        }
        if x.is_infinite() && self.overflow == OverflowMode::Wrap {
            return 0.0;
        }
        let k = self.reduce_scaled(self.round_scaled(x));
        libm::ldexp(k, -self.frac_bits) + 0.0
    }

    /// Mantissa of [`quantize`](Self::quantize). Valid for widths up to 126.
    pub fn quantize_mantissa(&self, x: f64) -> i128 {
        if self.is_pruned() || x.is_nan() {
            return 0;
        }
        if x.is_infinite() && self.overflow == OverflowMode::Wrap {
            return 0;
        }
        self.reduce_scaled(self.round_scaled(x)) as i128
    }

    /// Rounded mantissa without overflow handling (training semantics).
    pub fn round_mantissa(&self, x: f64) -> f64 {
        self.round_scaled(x)
    }

    /// Applies the overflow mode to an exact integer mantissa.
    pub fn reduce_mantissa(&self, k: i128) -> i128 {
        if self.is_pruned() {
            return 0;
        }
        let (lo, hi) = self.mantissa_range();
        match self.overflow {
            OverflowMode::Sat => k.clamp(lo, hi),
            OverflowMode::Wrap => {
                let w = self.width();
                let modulus = 1i128 << w;
                (k - lo).rem_euclid(modulus) + lo
            }
        }
    }

    pub fn contains_mantissa(&self, k: i128) -> bool {
        let (lo, hi) = self.mantissa_range();
        k >= lo && k <= hi
    }

    pub fn token(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for FixedPointFormat {
    /// `[s]<i>.<f>:<RND|TRN>:<WRAP|SAT>`, e.g. `s3.4:RND:WRAP`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.signed {
            f.write_str("s")?;
        }
        let r = match self.round {
            RoundMode::Rnd => "RND",
            RoundMode::Trn => "TRN",
        };
        let o = match self.overflow {
            OverflowMode::Wrap => "WRAP",
            OverflowMode::Sat => "SAT",
        };
        write!(f, "{}.{}:{}:{}", self.int_bits, self.frac_bits, r, o)
    }
}

impl FromStr for FixedPointFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |msg: &str| Error::Parse {
            line: 0,
            msg: alloc::format!("bad format token {s:?}: {msg}"),
        };
        let mut parts = s.split(':');
        let bits = parts.next().ok_or_else(|| bad("empty"))?;
        let round = match parts.next() {
            Some("RND") => RoundMode::Rnd,
            Some("TRN") => RoundMode::Trn,
            _ => return Err(bad("rounding mode")),
        };
        let overflow = match parts.next() {
            Some("WRAP") => OverflowMode::Wrap,
            Some("SAT") => OverflowMode::Sat,
            _ => return Err(bad("overflow mode")),
        };
        if parts.next().is_some() {
            return Err(bad("trailing fields"));
        }
        let (signed, bits) = match bits.strip_prefix('s') {
            Some(rest) => (true, rest),
            None => (false, bits),
        };
        let (i, f) = bits.split_once('.').ok_or_else(|| bad("missing '.'"))?;
        let int_bits = i.parse().map_err(|_| bad("integer bits"))?;
        let frac_bits = f.parse().map_err(|_| bad("fractional bits"))?;
        Ok(Self {
            signed,
            int_bits,
            frac_bits,
            round,
            overflow,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fmt(s: bool, i: i32, f: i32, r: RoundMode, o: OverflowMode) -> FixedPointFormat {
        FixedPointFormat::new(s, i, f).with_modes(r, o)
    }

    #[test]
    fn spec_examples() {
        use OverflowMode::*;
        use RoundMode::*;
        assert_eq!(fmt(true, 0, 1, Rnd, Sat).quantize(0.3), 0.5);
        assert_eq!(fmt(true, 0, 1, Rnd, Sat).quantize(0.8), 0.5);
        assert_eq!(fmt(true, 1, 0, Rnd, Wrap).quantize(2.0), -2.0);
        let zero = fmt(true, -1, 0, Rnd, Wrap);
        assert_eq!(zero.width(), 0);
        for x in [-1e9, -3.2, 0.0, 0.49, 7.0, 1e30] {
            assert_eq!(zero.quantize(x), 0.0);
        }
    }

    #[test]
    fn large_values_round_exactly() {
        // 2^52 + 1 is odd; `x + 0.5` would round it up to 2^52 + 2.
        let f = fmt(true, 60, 0, RoundMode::Rnd, OverflowMode::Sat);
        let x = 4503599627370497.0;
        assert_eq!(f.quantize(x), x);
    }

    #[test]
    fn wrap_and_sat_on_mantissas() {
        let f = fmt(false, 2, 1, RoundMode::Trn, OverflowMode::Wrap);
        assert_eq!(f.mantissa_range(), (0, 7));
        assert_eq!(f.reduce_mantissa(9), 1);
        assert_eq!(f.reduce_mantissa(-1), 7);
        let g = fmt(true, 2, 1, RoundMode::Trn, OverflowMode::Sat);
        assert_eq!(g.reduce_mantissa(100), 7);
        assert_eq!(g.reduce_mantissa(-100), -8);
        assert_eq!(g.value_range(), (-4.0, 3.5));
    }

    #[test]
    fn negative_bits() {
        // Step 4, range [-8, 4].
        let f = fmt(true, 3, -2, RoundMode::Rnd, OverflowMode::Sat);
        assert_eq!(f.width(), 2);
        assert_eq!(f.quantize(5.0), 4.0);
        assert_eq!(f.quantize(-100.0), -8.0);
        // Range [0, 0.25) with step 1/8.
        let g = fmt(false, -1, 3, RoundMode::Rnd, OverflowMode::Sat);
        assert_eq!(g.value_range(), (0.0, 0.375));
    }

    #[test]
    fn token_round_trip() {
        for tok in ["s3.4:RND:WRAP", "0.8:TRN:SAT", "s-2.5:RND:SAT", "3.-2:TRN:WRAP"] {
            let f: FixedPointFormat = tok.parse().unwrap();
            assert_eq!(f.to_string(), tok);
        }
        assert!("s3.4:RND".parse::<FixedPointFormat>().is_err());
        assert!("s3:RND:WRAP".parse::<FixedPointFormat>().is_err());
        assert!("x3.4:RND:WRAP".parse::<FixedPointFormat>().is_err());
    }

    #[test]
    fn non_finite_inputs() {
        let w = fmt(true, 2, 2, RoundMode::Rnd, OverflowMode::Wrap);
        assert_eq!(w.quantize(f64::NAN), 0.0);
        assert_eq!(w.quantize(f64::INFINITY), 0.0);
        let s = w.with_modes(RoundMode::Rnd, OverflowMode::Sat);
        assert_eq!(s.quantize(f64::INFINITY), 3.75);
        assert_eq!(s.quantize(f64::NEG_INFINITY), -4.0);
    }
}
