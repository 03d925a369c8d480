//! Every op kind, alone in a graph, merged and checked against per-model runs.

mod common;

use common::stores;
use netmerge::harness::verify;
use netmerge::ir::shape::expected_output;
use netmerge::merger::explain;
use netmerge::{merge, DType, EdgeRef, Graph, KindTag, OpKind, OpNode, TensorSpec};
use proptest::prelude::*;

const EPS: f64 = 1e-5;

/// A one-node graph exercising `tag`, with its inputs and the batch sizes it supports.
fn single_op(tag: KindTag, dtype: DType, c: usize) -> (Graph, bool) {
    let spec = |dims: &[usize]| TensorSpec::new(dtype, dims.to_vec());
    let img = spec(&[1, 2 * c, 4, 4]);
    let seq = spec(&[1, 3, 2 * c]);
    let (kind, inputs, free, weights): (OpKind, Vec<TensorSpec>, Vec<usize>, &[&str]) = match tag {
        KindTag::Conv2D => (
            OpKind::Conv2D {
                kernel: 3,
                stride: 1,
                padding: 1,
            },
            vec![img],
            vec![3],
            &["kernel", "bias"],
        ),
        KindTag::GroupedConv2D => (
            OpKind::GroupedConv2D {
                kernel: 3,
                stride: 2,
                padding: 1,
                groups: 2,
            },
            vec![img],
            vec![4],
            &["kernel", "bias"],
        ),
        KindTag::MatMul => (OpKind::MatMul, vec![seq], vec![5], &["weight", "bias"]),
        KindTag::BatchMatMul => (
            OpKind::BatchMatMul { batch: 3 },
            vec![seq],
            vec![5],
            &["weight", "bias"],
        ),
        KindTag::LayerNorm => (OpKind::LayerNorm { eps: EPS }, vec![img], vec![], &["gamma", "beta"]),
        KindTag::GroupNorm => (
            OpKind::GroupNorm { groups: 2, eps: EPS },
            vec![seq],
            vec![],
            &["gamma", "beta"],
        ),
        KindTag::BatchNorm => (
            OpKind::BatchNorm { eps: EPS },
            vec![img],
            vec![],
            &["gamma", "beta", "running_mean", "running_var"],
        ),
        KindTag::ReLU => (OpKind::ReLU, vec![img], vec![], &[]),
        KindTag::Tanh => (OpKind::Tanh, vec![seq], vec![], &[]),
        KindTag::Softmax => (OpKind::Softmax { axis: 2 }, vec![seq], vec![], &[]),
        KindTag::MaxPool2D => (OpKind::MaxPool2D { kernel: 2, stride: 2 }, vec![img], vec![], &[]),
        KindTag::MeanPool2D => (OpKind::MeanPool2D { kernel: 2, stride: 1 }, vec![seq], vec![], &[]),
        KindTag::Add => (OpKind::Add, vec![img.clone(), img], vec![], &[]),
        KindTag::Mul => (OpKind::Mul, vec![seq.clone(), seq], vec![], &[]),
        KindTag::Concat => (OpKind::Concat { axis: 1 }, vec![seq.clone(), seq], vec![], &[]),
        KindTag::Reshape => (
            OpKind::Reshape {
                shape: vec![-1, 2, 16 * c as i64],
            },
            vec![img],
            vec![],
            &[],
        ),
        KindTag::Transpose => (OpKind::Transpose { perm: vec![0, 1, 3, 2] }, vec![img], vec![], &[]),
        KindTag::Pack => (
            OpKind::Pack { axis: 1, stack: true },
            vec![seq.clone(), seq],
            vec![],
            &[],
        ),
        KindTag::Unpack => (
            OpKind::Unpack {
                axis: 1,
                count: 3,
                stack: true,
            },
            vec![seq],
            vec![],
            &[],
        ),
    };
    let mut g = Graph::new();
    let edges: Vec<EdgeRef> = inputs
        .iter()
        .enumerate()
        .map(|(i, s)| g.add_input(format!("x{i}"), s.clone()))
        .collect();
    let refs: Vec<&TensorSpec> = inputs.iter().collect();
    let mut free = free.into_iter();
    let dims: Vec<usize> = expected_output(&kind, &refs)
        .unwrap()
        .into_iter()
        .map(|d| d.unwrap_or_else(|| free.next().unwrap()))
        .collect();
    let outputs = kind.num_outputs();
    let node = OpNode::new("op", kind, edges, spec(&dims)).with_weights(weights.iter().map(|w| format!("op.{w}")));
    g.add_node(node);
    for i in 0..outputs {
        g.add_output(EdgeRef::new("op", i));
    }
    // Row blocks of a BatchMatMul are only well defined at batch 1.
    (g, tag != KindTag::BatchMatMul)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn each_kind_merges_bit_exactly(
        kind in 0usize..KindTag::ALL.len(),
        m in prop::sample::select(vec![1usize, 2, 3, 4, 8]),
        c in 1usize..=3,
        batch in 1usize..=3,
        seed in any::<u64>(),
        f64_dtype in any::<bool>(),
    ) {
        let tag = KindTag::ALL[kind];
        let dtype = if f64_dtype { DType::F64 } else { DType::F32 };
        let (g, any_batch) = single_op(tag, dtype, c);
        let batch = if any_batch { batch } else { 1 };
        let s = stores(&g, m, seed);
        let (merged, weights) = merge(&g, &s).unwrap();
        let refs: Vec<_> = s.into_iter().map(|w| (g.clone(), w)).collect();
        let report = verify(&refs, &merged, &weights, batch, seed, None).unwrap();
        prop_assert!(report.passed, "{tag} M={m}\n{report}\n{}", explain(&merged));
    }
}

#[test]
fn every_kind_at_every_model_count() {
    for tag in KindTag::ALL {
        for m in [1, 2, 3, 4, 8] {
            let (g, _) = single_op(tag, DType::F32, 2);
            let s = stores(&g, m, 7);
            let (merged, weights) = merge(&g, &s).unwrap();
            let refs: Vec<_> = s.into_iter().map(|w| (g.clone(), w)).collect();
            let report = verify(&refs, &merged, &weights, 1, 7, None).unwrap();
            assert!(report.passed, "{tag} M={m}\n{report}");
        }
    }
}
