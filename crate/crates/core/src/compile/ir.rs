use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write;

use super::graph::{FxpGraph, Node, NodeId, NodeOp};
use crate::fxp::FixedPointFormat;
use crate::{Error, Result};

pub const IR_HEADER: &str = "fxq-ir 1";

/// Renders the graph as line-oriented text:
///
/// ```text
/// fxq-ir 1
/// inputs s1.4:RND:WRAP 0.6:RND:WRAP
/// %0 = input 0 : w6 f4
/// %1 = shl %0, 2 : w8 f6
/// %2 = add %1, %0 : w9 f6
/// %3 = addc %2, 37 : w10 f6
/// %4 = trunc %3, 2 : w8 f4
/// %5 = wrap %4, s2.4:RND:WRAP : w7 f4
/// output %5, s2.4:RND:WRAP
/// ```
pub fn emit_ir(graph: &FxpGraph) -> String {
    let mut s = String::new();
    s.push_str(IR_HEADER);
    s.push_str("\ninputs");
    for f in &graph.inputs {
        let _ = write!(s, " {f}");
    }
    s.push('\n');
    for (id, n) in graph.nodes.iter().enumerate() {
        let body = match n.op {
            NodeOp::Input { lane } => format!("input {lane}"),
            NodeOp::Const { value } => format!("const {value}"),
            NodeOp::Shl { src, amount } => format!("shl %{src}, {amount}"),
            NodeOp::Add { a, b } => format!("add %{a}, %{b}"),
            NodeOp::Sub { a, b } => format!("sub %{a}, %{b}"),
            NodeOp::Neg { a } => format!("neg %{a}"),
            NodeOp::AddConst { a, value } => format!("addc %{a}, {value}"),
            NodeOp::Relu { a } => format!("relu %{a}"),
            NodeOp::Trunc { a, amount } => format!("trunc %{a}, {amount}"),
            NodeOp::Wrap { a, fmt } => format!("wrap %{a}, {fmt}"),
            NodeOp::Clip { a, fmt } => format!("clip %{a}, {fmt}"),
        };
        let _ = writeln!(s, "%{id} = {body} : w{} f{}", n.width, n.frac);
    }
    for (id, fmt) in &graph.outputs {
        let _ = writeln!(s, "output %{id}, {fmt}");
    }
    s
}

fn err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

fn node_ref(tok: &str, line: usize, defined: usize) -> Result<NodeId> {
    let id: NodeId = tok
        .strip_prefix('%')
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| err(line, format!("expected node reference, got `{tok}`")))?;
    if id >= defined {
        return Err(err(line, format!("%{id} used before definition")));
    }
    Ok(id)
}

fn number<T: core::str::FromStr>(tok: &str, line: usize) -> Result<T> {
    tok.parse()
        .map_err(|_| err(line, format!("expected integer, got `{tok}`")))
}

fn fmt_token(tok: &str, line: usize) -> Result<FixedPointFormat> {
    tok.parse::<FixedPointFormat>()
        .map_err(|_| err(line, format!("bad format `{tok}`")))
}

fn parse_node(line: usize, text: &str, defined: usize) -> Result<Node> {
    let (lhs, rhs) = text
        .split_once('=')
        .ok_or_else(|| err(line, "expected `%id = ...`"))?;
    let id: usize = lhs
        .trim()
        .strip_prefix('%')
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| err(line, "bad node id"))?;
    if id != defined {
        return Err(err(line, format!("expected %{defined}, got %{id}")));
    }
    let (body, ann) = rhs
        .rsplit_once(':')
        .filter(|(_, a)| a.trim_start().starts_with('w'))
        .ok_or_else(|| err(line, "missing `: w<W> f<F>` annotation"))?;
    let mut ann = ann.split_whitespace();
    let (width, frac) = match (ann.next(), ann.next(), ann.next()) {
        (Some(w), Some(f), None) => (
            w.strip_prefix('w').and_then(|t| t.parse::<u32>().ok()),
            f.strip_prefix('f').and_then(|t| t.parse::<i32>().ok()),
        ),
        _ => (None, None),
    };
    let (Some(width), Some(frac)) = (width, frac) else {
        return Err(err(line, "bad `: w<W> f<F>` annotation"));
    };
    let body = body.trim();
    let (op, rest) = body.split_once(' ').unwrap_or((body, ""));
    let args: Vec<&str> = if rest.trim().is_empty() {
        Vec::new()
    } else {
        rest.split(',').map(str::trim).collect()
    };
    let arity = |n: usize| -> Result<()> {
        if args.len() == n {
            Ok(())
        } else {
            Err(err(line, format!("`{op}` takes {n} operands, got {}", args.len())))
        }
    };
    let r = |i: usize| node_ref(args[i], line, defined);
    let op = match op {
        "input" => {
            arity(1)?;
            NodeOp::Input {
                lane: number(args[0], line)?,
            }
        }
        "const" => {
            arity(1)?;
            NodeOp::Const {
                value: number(args[0], line)?,
            }
        }
        "shl" => {
            arity(2)?;
            NodeOp::Shl {
                src: r(0)?,
                amount: number(args[1], line)?,
            }
        }
        "add" => {
            arity(2)?;
            NodeOp::Add { a: r(0)?, b: r(1)? }
        }
        "sub" => {
            arity(2)?;
            NodeOp::Sub { a: r(0)?, b: r(1)? }
        }
        "neg" => {
            arity(1)?;
            NodeOp::Neg { a: r(0)? }
        }
        "addc" => {
            arity(2)?;
            NodeOp::AddConst {
                a: r(0)?,
                value: number(args[1], line)?,
            }
        }
        "relu" => {
            arity(1)?;
            NodeOp::Relu { a: r(0)? }
        }
        "trunc" => {
            arity(2)?;
            NodeOp::Trunc {
                a: r(0)?,
                amount: number(args[1], line)?,
            }
        }
        "wrap" => {
            arity(2)?;
            NodeOp::Wrap {
                a: r(0)?,
                fmt: fmt_token(args[1], line)?,
            }
        }
        "clip" => {
            arity(2)?;
            NodeOp::Clip {
                a: r(0)?,
                fmt: fmt_token(args[1], line)?,
            }
        }
        other => return Err(err(line, format!("unknown op `{other}`"))),
    };
    Ok(Node { op, width, frac })
}

/// Parses text produced by [`emit_ir`]. Blank lines and `;` comments are
/// ignored. The result is validated.
pub fn parse_ir(text: &str) -> Result<FxpGraph> {
    let mut g = FxpGraph::default();
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split(';').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());
    match lines.next() {
        Some((_, l)) if l == IR_HEADER => {}
        Some((n, _)) => return Err(err(n, format!("expected header `{IR_HEADER}`"))),
        None => return Err(err(0, "empty input")),
    }
    match lines.next() {
        Some((n, l)) if l == "inputs" || l.starts_with("inputs ") => {
            for tok in l["inputs".len()..].split_whitespace() {
                g.inputs.push(fmt_token(tok, n)?);
            }
        }
        Some((n, _)) => return Err(err(n, "expected `inputs` line")),
        None => return Err(err(0, "missing `inputs` line")),
    }
    for (n, l) in lines {
        if let Some(rest) = l.strip_prefix("output ") {
            let (r, f) = rest
                .split_once(',')
                .ok_or_else(|| err(n, "expected `output %id, <fmt>`"))?;
            let id = node_ref(r.trim(), n, g.nodes.len())?;
            g.outputs.push((id, fmt_token(f.trim(), n)?));
        } else if !g.outputs.is_empty() {
            return Err(err(n, "node after outputs"));
        } else {
            g.nodes.push(parse_node(n, l, g.nodes.len())?);
        }
    }
    g.validate().map_err(|e| err(0, e.to_string()))?;
    Ok(g)
}
