//! Shared fixtures for the benchmarks.

use std::collections::BTreeMap;

use netmerge::harness::{build, init, ZooName};
use netmerge::kernels::concat;
use netmerge::{merge, DType, Graph, MergedGraph, TensorValue, WeightStore};

/// `M` instances of a zoo model with seeded weights and inputs.
pub struct Fixture {
    pub graph: Graph,
    pub stores: Vec<WeightStore>,
    pub inputs: Vec<BTreeMap<String, TensorValue>>,
}

impl Fixture {
    pub fn new(name: ZooName, m: usize, batch: usize) -> Self {
        let graph = build(name, DType::F32);
        let stores = (0..m)
            .map(|i| init::weights(&graph, 0, i).expect("zoo weights"))
            .collect();
        let inputs = (0..m).map(|i| init::inputs(&graph, batch, 0, i)).collect();
        Fixture { graph, stores, inputs }
    }

    /// The merged graph, its weights, and the packed inputs.
    pub fn merged(&self) -> (MergedGraph, WeightStore, BTreeMap<String, TensorValue>) {
        let (merged, weights) = merge(&self.graph, &self.stores).expect("zoo models merge");
        let packed = merged.pack_inputs(&self.inputs);
        (merged, weights, packed)
    }
}

/// Deterministic values in `[-1, 1)`; enough variety for timing.
pub fn tensor(dims: &[usize], salt: u64) -> TensorValue {
    let n: usize = dims.iter().product();
    let data = (0..n as u64)
        .map(|i| {
            let h = (i ^ salt).wrapping_mul(0x9e37_79b9_7f4a_7c15) >> 40;
            (h as f32 / (1u64 << 23) as f32) - 1.0
        })
        .collect();
    TensorValue::from_vec(dims.to_vec(), data).expect("dims match data")
}

/// `m` conv operands of the given per-model shape, plus their concatenation
/// along the channel axis (inputs) and output-channel axis (kernels).
pub struct ConvCase {
    pub xs: Vec<TensorValue>,
    pub ws: Vec<TensorValue>,
    pub x: TensorValue,
    pub w: TensorValue,
}

pub fn conv_case(m: usize, c: usize, hw: usize) -> ConvCase {
    let xs: Vec<_> = (0..m).map(|i| tensor(&[1, c, hw, hw], i as u64)).collect();
    let ws: Vec<_> = (0..m).map(|i| tensor(&[c, c, 3, 3], 100 + i as u64)).collect();
    let x = concat(&xs.iter().collect::<Vec<_>>(), 1).expect("same shapes");
    let w = concat(&ws.iter().collect::<Vec<_>>(), 0).expect("same shapes");
    ConvCase { xs, ws, x, w }
}
