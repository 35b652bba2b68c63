use alloc::vec::Vec;

use super::graph::{signed_bits, FxpGraph, Node, NodeId, NodeOp};
use crate::fxp::{FixedPointFormat, OverflowMode, RoundMode};
use crate::qlayers::{DeployModel, QModel};
use crate::resource::{freeze, CalibrationResult, Csd};
use crate::{Error, Result};

/// Calibrates formats into integers and lowers the result.
pub fn lower(model: &QModel, calib: &CalibrationResult) -> Result<FxpGraph> {
    lower_deployed(&freeze(model, calib)?)
}

struct Builder {
    g: FxpGraph,
    range: Vec<(i128, i128)>,
}

fn overflow(node: usize) -> Error {
    Error::WidthOverflow { node, width: 129 }
}

fn shl_range((lo, hi): (i128, i128), p: u32, node: usize) -> Result<(i128, i128)> {
    let s = |v: i128| {
        v.checked_shl(p)
            .filter(|r| r >> p == v)
            .ok_or_else(|| overflow(node))
    };
    Ok((s(lo)?, s(hi)?))
}

impl Builder {
    fn push(&mut self, op: NodeOp, frac: i32, range: (i128, i128)) -> NodeId {
        self.g.nodes.push(Node {
            op,
            width: signed_bits(range.0, range.1),
            frac,
        });
        self.range.push(range);
        self.g.nodes.len() - 1
    }

    fn frac(&self, n: NodeId) -> i32 {
        self.g.nodes[n].frac
    }

    fn next(&self) -> usize {
        self.g.nodes.len()
    }

    fn aligned(&self, n: NodeId, frac: i32) -> Result<(i128, i128)> {
        shl_range(self.range[n], (frac - self.frac(n)) as u32, self.next())
    }

    fn shl(&mut self, src: NodeId, amount: u32, frac: i32) -> Result<NodeId> {
        let r = shl_range(self.range[src], amount, self.next())?;
        Ok(self.push(NodeOp::Shl { src, amount }, frac, r))
    }

    fn add_sub(&mut self, a: NodeId, b: NodeId, sub: bool) -> Result<NodeId> {
        let frac = self.frac(a).max(self.frac(b));
        let (al, ah) = self.aligned(a, frac)?;
        let (bl, bh) = self.aligned(b, frac)?;
        let id = self.next();
        let r = if sub {
            (al.checked_sub(bh), ah.checked_sub(bl))
        } else {
            (al.checked_add(bl), ah.checked_add(bh))
        };
        let r = match r {
            (Some(lo), Some(hi)) => (lo, hi),
            _ => return Err(overflow(id)),
        };
        let op = if sub {
            NodeOp::Sub { a, b }
        } else {
            NodeOp::Add { a, b }
        };
        Ok(self.push(op, frac, r))
    }

    fn neg(&mut self, a: NodeId) -> Result<NodeId> {
        let (lo, hi) = self.range[a];
        let r = match (hi.checked_neg(), lo.checked_neg()) {
            (Some(l), Some(h)) => (l, h),
            _ => return Err(overflow(self.next())),
        };
        let frac = self.frac(a);
        Ok(self.push(NodeOp::Neg { a }, frac, r))
    }

    fn add_const(&mut self, a: NodeId, value: i128, frac: i32) -> Result<NodeId> {
        let (lo, hi) = self.aligned(a, frac)?;
        let r = match (lo.checked_add(value), hi.checked_add(value)) {
            (Some(l), Some(h)) => (l, h),
            _ => return Err(overflow(self.next())),
        };
        Ok(self.push(NodeOp::AddConst { a, value }, frac, r))
    }

    fn relu(&mut self, a: NodeId) -> NodeId {
        let (lo, hi) = self.range[a];
        let frac = self.frac(a);
        self.push(NodeOp::Relu { a }, frac, (lo.max(0), hi.max(0)))
    }

    fn trunc(&mut self, a: NodeId, amount: u32) -> NodeId {
        let (lo, hi) = self.range[a];
        let frac = self.frac(a) - amount as i32;
        let s = amount.min(127);
        self.push(NodeOp::Trunc { a, amount }, frac, (lo >> s, hi >> s))
    }

    fn requant(&mut self, a: NodeId, fmt: FixedPointFormat) -> NodeId {
        let (lo, hi) = self.range[a];
        let (flo, fhi) = fmt.mantissa_range();
        let op = match fmt.overflow {
            OverflowMode::Wrap => NodeOp::Wrap { a, fmt },
            OverflowMode::Sat => NodeOp::Clip { a, fmt },
        };
        // A clip keeps what is already in range; a wrap may land anywhere.
        let r = match fmt.overflow {
            OverflowMode::Sat => (lo.clamp(flo, fhi), hi.clamp(flo, fhi)),
            OverflowMode::Wrap if lo >= flo && hi <= fhi => (lo, hi),
            OverflowMode::Wrap => (flo, fhi),
        };
        let frac = fmt.frac_bits;
        self.push(op, frac, r)
    }
}

/// Multiplies `x` by the integer `|m|` using its CSD digits. The product
/// carries scale `frac`.
fn csd_product(b: &mut Builder, x: NodeId, m: i128, frac: i32) -> Result<NodeId> {
    let csd = Csd::encode(m.abs());
    let term = |b: &mut Builder, p: u32| -> Result<NodeId> {
        if p == 0 && frac == b.frac(x) {
            Ok(x)
        } else {
            b.shl(x, p, frac)
        }
    };
    let mut terms = csd.terms().into_iter();
    let (p0, _) = terms.next().expect("nonzero mantissa");
    let mut acc = term(b, p0)?;
    for (p, sign) in terms {
        let t = term(b, p)?;
        acc = b.add_sub(acc, t, sign < 0)?;
    }
    Ok(acc)
}

/// Balanced pairwise reduction of signed terms. The flag marks a term that
/// must be subtracted.
fn accumulate(b: &mut Builder, mut terms: Vec<(NodeId, bool)>) -> Result<Option<NodeId>> {
    if terms.is_empty() {
        return Ok(None);
    }
    while terms.len() > 1 {
        let mut next = Vec::with_capacity(terms.len().div_ceil(2));
        for pair in terms.chunks(2) {
            next.push(match *pair {
                [(a, na), (c, nc)] => match (na, nc) {
                    (false, false) => (b.add_sub(a, c, false)?, false),
                    (false, true) => (b.add_sub(a, c, true)?, false),
                    (true, false) => (b.add_sub(c, a, true)?, false),
                    (true, true) => (b.add_sub(a, c, false)?, true),
                },
                [t] => t,
                _ => unreachable!(),
            });
        }
        terms = next;
    }
    let (n, negative) = terms[0];
    Ok(Some(if negative { b.neg(n)? } else { n }))
}

/// Lowers a frozen model. Zero weights and pruned lanes produce no nodes.
pub fn lower_deployed(model: &DeployModel) -> Result<FxpGraph> {
    model.validate()?;
    let mut b = Builder {
        g: FxpGraph {
            inputs: model.input_fmt.clone(),
            ..FxpGraph::default()
        },
        range: Vec::new(),
    };
    let mut lanes: Vec<Option<NodeId>> = Vec::with_capacity(model.n_inputs());
    for (lane, fmt) in model.input_fmt.iter().enumerate() {
        lanes.push(if fmt.is_pruned() {
            None
        } else {
            Some(b.push(NodeOp::Input { lane }, fmt.frac_bits, fmt.mantissa_range()))
        });
    }

    for layer in &model.layers {
        let mut out = Vec::with_capacity(layer.n_out);
        for k in 0..layer.n_out {
            let fmt = layer.act_fmt[k];
            if fmt.is_pruned() {
                out.push(None);
                continue;
            }
            let mut terms = Vec::new();
            for (j, lane) in lanes.iter().enumerate() {
                let e = j * layer.n_out + k;
                let m = layer.weight_mantissa[e];
                let Some(x) = *lane else { continue };
                if m == 0 {
                    continue;
                }
                let frac = b.frac(x) + layer.weight_fmt[e].frac_bits;
                terms.push((csd_product(&mut b, x, m, frac)?, m < 0));
            }
            let acc = accumulate(&mut b, terms)?;

            let mb = layer.bias_mantissa[k];
            let fb = layer.bias_fmt[k].frac_bits;
            let mut frac = match acc {
                Some(a) if mb != 0 => b.frac(a).max(fb),
                Some(a) => b.frac(a),
                None => fb,
            };
            if acc.is_none() && mb == 0 {
                frac = fmt.frac_bits;
            }
            let mut c = if mb != 0 {
                shl_range((mb, mb), (frac - fb) as u32, b.next())?.0
            } else {
                0
            };
            if fmt.round == RoundMode::Rnd && frac > fmt.frac_bits {
                c += 1i128 << (frac - fmt.frac_bits - 1) as u32;
            }
            let Some(acc) = acc else {
                let mut c = if layer.relu { c.max(0) } else { c };
                if frac > fmt.frac_bits {
                    c >>= (frac - fmt.frac_bits).min(127);
                } else {
                    c = shl_range((c, c), (fmt.frac_bits - frac) as u32, b.next())?.0;
                }
                let c = fmt.reduce_mantissa(c);
                out.push(Some(b.push(NodeOp::Const { value: c }, fmt.frac_bits, (c, c))));
                continue;
            };
            let mut v = if c == 0 {
                frac = b.frac(acc);
                acc
            } else {
                b.add_const(acc, c, frac)?
            };
            if layer.relu {
                v = b.relu(v);
            }
            if frac > fmt.frac_bits {
                v = b.trunc(v, (frac - fmt.frac_bits) as u32);
            } else if frac < fmt.frac_bits {
                v = b.shl(v, (fmt.frac_bits - frac) as u32, fmt.frac_bits)?;
            }
            out.push(Some(b.requant(v, fmt)));
        }
        lanes = out;
    }

    let out_fmt = model.output_fmt().to_vec();
    for (lane, fmt) in lanes.into_iter().zip(out_fmt) {
        let id = match lane {
            Some(id) => id,
            None => b.push(NodeOp::Const { value: 0 }, fmt.frac_bits, (0, 0)),
        };
        b.g.outputs.push((id, fmt));
    }
    Ok(sweep(b.g))
}

/// Drops nodes that no output depends on. Input ports are kept.
fn sweep(g: FxpGraph) -> FxpGraph {
    let mut live = alloc::vec![false; g.nodes.len()];
    for &(o, _) in &g.outputs {
        live[o] = true;
    }
    for id in (0..g.nodes.len()).rev() {
        if live[id] || matches!(g.nodes[id].op, NodeOp::Input { .. }) {
            live[id] = true;
            for &o in g.nodes[id].op.operands().iter() {
                live[o] = true;
            }
        }
    }
    let mut remap = alloc::vec![usize::MAX; g.nodes.len()];
    let mut nodes = Vec::new();
    for (id, mut n) in g.nodes.into_iter().enumerate() {
        if !live[id] {
            continue;
        }
        n.op = match n.op {
            NodeOp::Shl { src, amount } => NodeOp::Shl { src: remap[src], amount },
            NodeOp::Add { a, b } => NodeOp::Add { a: remap[a], b: remap[b] },
            NodeOp::Sub { a, b } => NodeOp::Sub { a: remap[a], b: remap[b] },
            NodeOp::Neg { a } => NodeOp::Neg { a: remap[a] },
            NodeOp::AddConst { a, value } => NodeOp::AddConst { a: remap[a], value },
            NodeOp::Relu { a } => NodeOp::Relu { a: remap[a] },
            NodeOp::Trunc { a, amount } => NodeOp::Trunc { a: remap[a], amount },
            NodeOp::Wrap { a, fmt } => NodeOp::Wrap { a: remap[a], fmt },
            NodeOp::Clip { a, fmt } => NodeOp::Clip { a: remap[a], fmt },
            op @ (NodeOp::Input { .. } | NodeOp::Const { .. }) => op,
        };
        remap[id] = nodes.len();
        nodes.push(n);
    }
    FxpGraph {
        inputs: g.inputs,
        nodes,
        outputs: g.outputs.into_iter().map(|(o, f)| (remap[o], f)).collect(),
    }
}
