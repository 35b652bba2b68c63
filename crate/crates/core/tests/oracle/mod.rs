//! Independent reference implementations in exact arithmetic, shared by
//! the integration tests.
#![allow(dead_code)]

use fxq_core::compile::{FxpGraph, NodeOp};
use fxq_core::fxp::{FixedPointFormat, OverflowMode, RoundMode};
use fxq_core::qlayers::DeployModel;
use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

pub fn rat(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite")
}

pub fn int(v: i128) -> BigInt {
    BigInt::from(v)
}

pub fn pow2(e: i32) -> BigRational {
    let p = BigRational::from_integer(BigInt::one() << e.unsigned_abs());
    if e >= 0 {
        p
    } else {
        p.recip()
    }
}

pub fn to_f64(r: &BigRational) -> f64 {
    r.to_f64().expect("representable")
}

/// Scaled integer of `x` at `f` fractional bits, without overflow handling.
pub fn round_scaled(x: &BigRational, f: i32, round: RoundMode) -> BigInt {
    let y = x * pow2(f);
    match round {
        RoundMode::Rnd => (y + BigRational::new(1.into(), 2.into())).floor().to_integer(),
        RoundMode::Trn => y.floor().to_integer(),
    }
}

/// Applies the overflow mode of `fmt` to a scaled integer.
pub fn reduce(k: BigInt, fmt: &FixedPointFormat) -> BigInt {
    let (s, i, f) = (fmt.signed as i32, fmt.int_bits, fmt.frac_bits);
    let w = s + i + f;
    if w <= 0 {
        return BigInt::zero();
    }
    let top = BigInt::one() << (i + f).max(0) as u32;
    let (lo, hi) = if i + f >= 0 {
        (if s == 1 { -top.clone() } else { BigInt::zero() }, top - 1)
    } else {
        // Signed width below one integer bit: only -1 and 0 remain.
        (BigInt::from(-1), BigInt::zero())
    };
    match fmt.overflow {
        OverflowMode::Sat => k.clamp(lo, hi),
        OverflowMode::Wrap => {
            let m = BigInt::one() << w as u32;
            (k - &lo).mod_floor(&m) + lo
        }
    }
}

/// Deployment quantizer on an exact rational.
pub fn quantize_exact(x: &BigRational, fmt: &FixedPointFormat) -> BigRational {
    let k = reduce(round_scaled(x, fmt.frac_bits, fmt.round), fmt);
    BigRational::from_integer(k) * pow2(-fmt.frac_bits)
}

/// Deployment forward of a frozen model in exact arithmetic.
pub fn deploy_forward_exact(m: &DeployModel, x: &[BigRational]) -> Vec<BigRational> {
    let mut h: Vec<BigRational> = x.iter().zip(&m.input_fmt).map(|(v, f)| quantize_exact(v, f)).collect();
    for l in &m.layers {
        h = (0..l.n_out)
            .map(|k| {
                let mut acc = BigRational::from_integer(int(l.bias_mantissa[k])) * pow2(-l.bias_fmt[k].frac_bits);
                for (j, hj) in h.iter().enumerate() {
                    let e = j * l.n_out + k;
                    let w = BigRational::from_integer(int(l.weight_mantissa[e])) * pow2(-l.weight_fmt[e].frac_bits);
                    acc += hj * w;
                }
                if l.relu && acc.is_negative() {
                    acc = BigRational::zero();
                }
                quantize_exact(&acc, &l.act_fmt[k])
            })
            .collect();
    }
    h
}

/// Every node value of `g`, computed with unbounded integers.
pub fn graph_values(g: &FxpGraph, input_mantissas: &[i128]) -> Vec<BigInt> {
    let mut v: Vec<BigInt> = Vec::with_capacity(g.nodes.len());
    for n in &g.nodes {
        let at = |id: usize| -> BigInt { v[id].clone() << (n.frac - g.nodes[id].frac) as u32 };
        let r = match n.op {
            NodeOp::Input { lane } => int(input_mantissas[lane]),
            NodeOp::Const { value } => int(value),
            NodeOp::Shl { src, amount } => v[src].clone() << amount,
            NodeOp::Add { a, b } => at(a) + at(b),
            NodeOp::Sub { a, b } => at(a) - at(b),
            NodeOp::Neg { a } => -v[a].clone(),
            NodeOp::AddConst { a, value } => at(a) + int(value),
            NodeOp::Relu { a } => v[a].clone().max(BigInt::zero()),
            NodeOp::Trunc { a, amount } => v[a].div_floor(&(BigInt::one() << amount)),
            NodeOp::Wrap { a, fmt } | NodeOp::Clip { a, fmt } => reduce(v[a].clone(), &fmt),
        };
        v.push(r);
    }
    v
}

/// Whether `v` fits a `width`-bit two's-complement register.
pub fn fits(v: &BigInt, width: u32) -> bool {
    if width == 0 {
        return v.is_zero();
    }
    let half = BigInt::one() << (width - 1);
    *v >= -half.clone() && *v < half
}

/// One scalar operation of the unrolled network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalarOp {
    Mul { a: u32, b: u32 },
    /// Bias addition onto an accumulator of the given width.
    Add { bias: u32, acc: u32 },
}

/// Unrolls every multiplication by a nonzero weight of a live input and
/// every nonzero bias addition.
pub fn unrolled_ops(m: &DeployModel) -> Vec<ScalarOp> {
    let mut ops = Vec::new();
    let mut in_fmt = m.input_fmt.clone();
    for l in &m.layers {
        for k in 0..l.n_out {
            let mut acc = 0u32;
            for j in 0..l.n_in {
                let e = j * l.n_out + k;
                let (bw, ba) = (l.weight_fmt[e].width(), in_fmt[j].width());
                if l.weight_mantissa[e] == 0 || ba == 0 {
                    continue;
                }
                ops.push(ScalarOp::Mul { a: bw, b: ba });
                acc = acc.max(bw + ba);
            }
            if l.bias_mantissa[k] != 0 {
                ops.push(ScalarOp::Add { bias: l.bias_fmt[k].width(), acc });
            }
        }
        in_fmt = l.act_fmt.clone();
    }
    ops
}

pub fn ebops_bruteforce(m: &DeployModel) -> u64 {
    unrolled_ops(m)
        .iter()
        .map(|op| match *op {
            ScalarOp::Mul { a, b } => (a * b) as u64,
            ScalarOp::Add { bias, acc } => bias.max(acc) as u64,
        })
        .sum()
}

/// Nonzero digits of the minimal signed-digit form of `c`, by recursion.
pub fn min_signed_digits(c: i128) -> u32 {
    match c {
        0 => 0,
        _ if c % 2 == 0 => min_signed_digits(c / 2),
        1 | -1 => 1,
        _ => 1 + min_signed_digits((c - 1) / 2).min(min_signed_digits((c + 1) / 2)),
    }
}
