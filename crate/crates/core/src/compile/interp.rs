use alloc::string::ToString;
use alloc::vec::Vec;

use super::graph::{FxpGraph, FxpValue, NodeOp};
use crate::{Error, Result};

fn fits(m: i128, width: u32) -> bool {
    if width == 0 {
        return m == 0;
    }
    if width >= 128 {
        return true;
    }
    let half = 1i128 << (width - 1);
    m >= -half && m < half
}

fn shl(m: i128, amount: u32, node: usize, width: u32) -> Result<i128> {
    let r = m.checked_shl(amount).filter(|r| r >> amount == m);
    r.ok_or(Error::WidthOverflow { node, width })
}

/// Evaluates `graph` exactly. Inputs must carry the graph's declared formats.
pub fn interpret(graph: &FxpGraph, inputs: &[FxpValue]) -> Result<Vec<FxpValue>> {
    if inputs.len() != graph.inputs.len() {
        return Err(Error::ShapeMismatch {
            op: "interpret",
            detail: alloc::format!("{} inputs for {} lanes", inputs.len(), graph.inputs.len()),
        });
    }
    for (index, (v, f)) in inputs.iter().zip(&graph.inputs).enumerate() {
        if v.format != *f {
            return Err(Error::FormatMismatch {
                index,
                expected: f.to_string(),
                got: v.format.to_string(),
            });
        }
    }
    graph.validate()?;
    let mut vals: Vec<i128> = Vec::with_capacity(graph.nodes.len());
    for (id, node) in graph.nodes.iter().enumerate() {
        let overflow = Error::WidthOverflow {
            node: id,
            width: node.width,
        };
        let aligned = |n: usize| shl(vals[n], (node.frac - graph.nodes[n].frac) as u32, id, node.width);
        let m = match node.op {
            NodeOp::Input { lane } => Some(inputs[lane].mantissa),
            NodeOp::Const { value } => Some(value),
            NodeOp::Shl { src, amount } => Some(shl(vals[src], amount, id, node.width)?),
            NodeOp::Add { a, b } => aligned(a)?.checked_add(aligned(b)?),
            NodeOp::Sub { a, b } => aligned(a)?.checked_sub(aligned(b)?),
            NodeOp::Neg { a } => vals[a].checked_neg(),
            NodeOp::AddConst { a, value } => aligned(a)?.checked_add(value),
            NodeOp::Relu { a } => Some(vals[a].max(0)),
            NodeOp::Trunc { a, amount } => Some(vals[a] >> amount.min(127)),
            NodeOp::Wrap { a, fmt } | NodeOp::Clip { a, fmt } => Some(fmt.reduce_mantissa(vals[a])),
        };
        let m = m.filter(|&m| fits(m, node.width)).ok_or(overflow)?;
        vals.push(m);
    }
    Ok(graph
        .outputs
        .iter()
        .map(|&(n, format)| FxpValue {
            mantissa: vals[n],
            format,
        })
        .collect())
}
