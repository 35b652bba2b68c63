use alloc::vec::Vec;
use core::fmt;

/// Canonical signed-digit form of an integer: digits in `{-1, 0, +1}`, no
/// two adjacent nonzero, with the minimum number of nonzero digits.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Csd {
    /// Least significant first. Empty for zero.
    digits: Vec<i8>,
}

impl Csd {
    pub fn encode(c: i128) -> Self {
        let mut digits = Vec::new();
        let mut c = c;
        while c != 0 {
            let d = if c & 1 == 0 {
                0
            } else if c.rem_euclid(4) == 1 {
                1
            } else {
                -1
            };
            digits.push(d);
            c = (c - d as i128) >> 1;
        }
        Self { digits }
    }

    pub fn digits(&self) -> &[i8] {
        &self.digits
    }

    pub fn nonzero_digits(&self) -> usize {
        self.digits.iter().filter(|&&d| d != 0).count()
    }

    /// Nonzero digits as `(shift, sign)`, most significant first.
    pub fn terms(&self) -> Vec<(u32, i8)> {
        self.digits
            .iter()
            .enumerate()
            .rev()
            .filter(|(_, &d)| d != 0)
            .map(|(p, &d)| (p as u32, d))
            .collect()
    }

    pub fn value(&self) -> i128 {
        self.digits
            .iter()
            .rev()
            .fold(0i128, |acc, &d| acc * 2 + d as i128)
    }

    pub fn is_canonical(&self) -> bool {
        self.digits.windows(2).all(|w| w[0] == 0 || w[1] == 0)
            && self.digits.last().is_none_or(|&d| d != 0)
    }
}

impl fmt::Display for Csd {
    /// Most significant digit first, e.g. `+00-` for 7.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &d in self.digits.iter().rev() {
            f.write_str(match d {
                1 => "+",
                -1 => "-",
                _ => "0",
            })?;
        }
        Ok(())
    }
}
