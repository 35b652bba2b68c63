//! Lowering of a calibrated model to an integer fixed-point compute graph.
//!
//! Every constant multiplication becomes shifts and adds over the CSD
//! digits of the weight mantissa; the bias and the RND half-LSB are folded
//! into one constant add; requantization is a floor shift followed by a
//! wrap or clip. [`interpret`] evaluates the graph on exact integers and
//! [`emit_ir`] / [`parse_ir`] convert it to and from text.

mod graph;
mod interp;
mod ir;
mod lower;

pub use graph::{signed_bits, FxpGraph, FxpValue, Node, NodeId, NodeOp, OpCounts, Operands};
pub use interp::interpret;
pub use ir::{emit_ir, parse_ir, IR_HEADER};
pub use lower::{lower, lower_deployed};
