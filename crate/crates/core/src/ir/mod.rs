//! Computation-graph IR: tensor specs, op kinds, graphs, validation and
//! the JSON document format.

mod graph;
mod json;
mod op;
pub mod shape;
mod spec;
mod topo;
mod validate;

use thiserror::Error;

pub use graph::{EdgeRef, Graph, GraphInput, OpNode};
pub use json::{deserialize, serialize};
pub use op::{KindTag, OpKind};
pub use shape::weight_specs;
pub use spec::{channel_axis, DType, Layout, MergeDim, TensorSpec};
pub use topo::topological_order;
pub use validate::{validate, Diagnostic};

#[derive(Debug, Error)]
pub enum IrError {
    #[error("cycle detected at {0}")]
    Cycle(String),
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("unsupported op `{0}`")]
    UnsupportedOp(String),
    #[error("node `{node}`: {message}")]
    Schema { node: String, message: String },
    #[error("invalid graph: {0}")]
    Invalid(String),
}
