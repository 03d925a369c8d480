//! Merging of structurally identical neural networks.
//!
//! `M` models that share one architecture but have their own weights and
//! inputs are fused into a single graph. Each op is swapped for a
//! counterpart that keeps every model's inputs paired with that model's
//! weights (matmul becomes batch matmul, convolution becomes grouped
//! convolution, layer norm becomes group norm, and so on), and the packing
//! of intermediate tensors is reconciled with transpose+reshape glue.
//!
//! The reference kernels fix their accumulation order, so the merged graph
//! reproduces each model's outputs bit for bit.

pub mod exec;
pub mod harness;
pub mod ir;
pub mod kernels;
pub mod merger;
pub mod rules;
pub mod tensor;
pub mod weights;

pub use exec::{execute, execute_with, ExecError, ExecOptions, ExecTrace};
pub use ir::{DType, EdgeRef, Graph, IrError, KindTag, Layout, MergeDim, OpKind, OpNode, TensorSpec};
pub use merger::{merge, merge_backbone, MergeError, MergedGraph};
pub use rules::{rule_for, MergeRule};
pub use tensor::{TensorError, TensorValue};
pub use weights::WeightStore;
