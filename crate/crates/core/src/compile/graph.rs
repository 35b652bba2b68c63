use alloc::vec;
use alloc::vec::Vec;

use crate::fxp::{FixedPointFormat, OverflowMode};
use crate::{Error, Result};

pub type NodeId = usize;

/// Operations on integer mantissas. A node's value is `m * 2^-frac` where
/// `frac` is declared on the node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeOp {
    /// Mantissa of input lane `lane` (format from [`FxpGraph::inputs`]).
    Input { lane: usize },
    Const { value: i128 },
    /// `m << amount`. The declared frac relabels the scale, so this is also
    /// the multiply-by-power-of-two and the lossless requantize-up.
    Shl { src: NodeId, amount: u32 },
    /// Operands are aligned to the node's frac before adding.
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Neg { a: NodeId },
    /// Adds a constant given at the node's frac (bias plus rounding offset).
    AddConst { a: NodeId, value: i128 },
    Relu { a: NodeId },
    /// Arithmetic shift right (floor) by `amount`.
    Trunc { a: NodeId, amount: u32 },
    Wrap { a: NodeId, fmt: FixedPointFormat },
    Clip { a: NodeId, fmt: FixedPointFormat },
}

/// Up to two operand ids, without allocating.
#[derive(Debug, Clone, Copy)]
pub struct Operands {
    ids: [NodeId; 2],
    len: usize,
}

impl core::ops::Deref for Operands {
    type Target = [NodeId];

    fn deref(&self) -> &[NodeId] {
        &self.ids[..self.len]
    }
}

impl NodeOp {
    pub fn operands(&self) -> Operands {
        let (ids, len) = match *self {
            NodeOp::Input { .. } | NodeOp::Const { .. } => ([0, 0], 0),
            NodeOp::Shl { src, .. } => ([src, 0], 1),
            NodeOp::Add { a, b } | NodeOp::Sub { a, b } => ([a, b], 2),
            NodeOp::Neg { a }
            | NodeOp::AddConst { a, .. }
            | NodeOp::Relu { a }
            | NodeOp::Trunc { a, .. }
            | NodeOp::Wrap { a, .. }
            | NodeOp::Clip { a, .. } => ([a, 0], 1),
        };
        Operands { ids, len }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Node {
    pub op: NodeOp,
    /// Two's-complement width that holds every value the node can take.
    pub width: u32,
    pub frac: i32,
}

/// Acyclic integer compute graph in topological order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FxpGraph {
    pub inputs: Vec<FixedPointFormat>,
    pub nodes: Vec<Node>,
    pub outputs: Vec<(NodeId, FixedPointFormat)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct OpCounts {
    pub shifts: usize,
    /// Two-operand adds and subtracts.
    pub adders: usize,
    pub const_adds: usize,
    pub negations: usize,
    pub relus: usize,
    pub truncs: usize,
    pub wraps: usize,
    pub clips: usize,
}

impl FxpGraph {
    pub fn op_counts(&self) -> OpCounts {
        let mut c = OpCounts::default();
        for n in &self.nodes {
            match n.op {
                NodeOp::Shl { .. } => c.shifts += 1,
                NodeOp::Add { .. } | NodeOp::Sub { .. } => c.adders += 1,
                NodeOp::AddConst { .. } => c.const_adds += 1,
                NodeOp::Neg { .. } => c.negations += 1,
                NodeOp::Relu { .. } => c.relus += 1,
                NodeOp::Trunc { .. } => c.truncs += 1,
                NodeOp::Wrap { .. } => c.wraps += 1,
                NodeOp::Clip { .. } => c.clips += 1,
                NodeOp::Input { .. } | NodeOp::Const { .. } => {}
            }
        }
        c
    }

    /// Checks topological order, operand scales and declared widths.
    pub fn validate(&self) -> Result<()> {
        let bad = |id: usize, msg: &str| Err(Error::ContractViolation(alloc::format!("node %{id}: {msg}")));
        for (id, n) in self.nodes.iter().enumerate() {
            if n.width > 128 {
                return bad(id, "width above 128");
            }
            for &o in n.op.operands().iter() {
                if o >= id {
                    return bad(id, "operand does not precede node");
                }
            }
            let f = |o: NodeId| self.nodes[o].frac;
            let ok = match n.op {
                NodeOp::Input { lane } => {
                    lane < self.inputs.len() && self.inputs[lane].frac_bits == n.frac
                }
                NodeOp::Const { .. } => true,
                NodeOp::Shl { amount, .. } => amount < 128,
                NodeOp::Add { a, b } | NodeOp::Sub { a, b } => n.frac >= f(a) && n.frac >= f(b),
                NodeOp::AddConst { a, .. } => n.frac >= f(a),
                NodeOp::Neg { a } | NodeOp::Relu { a } => n.frac == f(a),
                NodeOp::Trunc { a, amount } => amount < 128 && n.frac == f(a) - amount as i32,
                NodeOp::Wrap { a, fmt } | NodeOp::Clip { a, fmt } => {
                    n.frac == f(a) && n.frac == fmt.frac_bits
                }
            };
            if !ok {
                return bad(id, "inconsistent operand scale");
            }
            match n.op {
                NodeOp::Wrap { fmt, .. } if fmt.overflow != OverflowMode::Wrap => {
                    return bad(id, "wrap with SAT format")
                }
                NodeOp::Clip { fmt, .. } if fmt.overflow != OverflowMode::Sat => {
                    return bad(id, "clip with WRAP format")
                }
                _ => {}
            }
        }
        for (i, &(o, fmt)) in self.outputs.iter().enumerate() {
            if o >= self.nodes.len() || self.nodes[o].frac != fmt.frac_bits {
                return Err(Error::ContractViolation(alloc::format!("output {i} is inconsistent")));
            }
        }
        Ok(())
    }

    /// Longest chain of adders (including constant adds) from any input to
    /// any output. An uncalibrated latency proxy.
    pub fn adder_depth(&self) -> usize {
        let mut depth = vec![0usize; self.nodes.len()];
        for (id, n) in self.nodes.iter().enumerate() {
            let d = n.op.operands().iter().map(|&o| depth[o]).max().unwrap_or(0);
            let own = matches!(
                n.op,
                NodeOp::Add { .. } | NodeOp::Sub { .. } | NodeOp::AddConst { .. }
            );
            depth[id] = d + own as usize;
        }
        self.outputs.iter().map(|&(o, _)| depth[o]).max().unwrap_or(0)
    }
}

/// Smallest two's-complement width holding `[lo, hi]`; zero for `[0, 0]`.
pub fn signed_bits(lo: i128, hi: i128) -> u32 {
    if lo == 0 && hi == 0 {
        return 0;
    }
    let need = |v: i128| -> u32 {
        if v >= 0 {
            129 - v.leading_zeros()
        } else {
            129 - (!v).leading_zeros()
        }
    };
    need(lo).max(need(hi))
}

/// Exact fixed-point value: `mantissa * 2^-format.frac_bits`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FxpValue {
    pub mantissa: i128,
    pub format: FixedPointFormat,
}

impl FxpValue {
    pub fn from_real(x: f64, format: FixedPointFormat) -> Self {
        Self {
            mantissa: format.quantize_mantissa(x),
            format,
        }
    }

    pub fn value(&self) -> f64 {
        self.format.value_of(self.mantissa)
    }
}
