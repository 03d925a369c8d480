//! Static shape rules shared by validation, weight-spec derivation and the merger.

use std::collections::BTreeMap;

use super::{Graph, IrError, OpKind, OpNode, TensorSpec};

/// Output extents implied by a node's inputs; `None` marks an extent that
/// only the weights determine (output channels, matmul width).
pub fn expected_output(kind: &OpKind, inputs: &[&TensorSpec]) -> Result<Vec<Option<usize>>, String> {
    let arity_ok = match kind {
        OpKind::Add | OpKind::Mul => inputs.len() == 2,
        OpKind::Concat { .. } | OpKind::Pack { .. } => !inputs.is_empty(),
        _ => inputs.len() == 1,
    };
    if !arity_ok {
        return Err(format!("{} does not take {} inputs", kind.name(), inputs.len()));
    }
    let dtype = inputs[0].dtype;
    if inputs.iter().any(|s| s.dtype != dtype) {
        return Err("inputs have mixed dtypes".into());
    }
    let x = inputs[0];
    let dims = &x.dims;
    let rank = x.rank();
    let same = || Ok(dims.iter().copied().map(Some).collect());

    match kind {
        OpKind::Conv2D {
            kernel,
            stride,
            padding,
        } => conv_output(x, *kernel, *stride, *padding, 1),
        OpKind::GroupedConv2D {
            kernel,
            stride,
            padding,
            groups,
        } => conv_output(x, *kernel, *stride, *padding, *groups),
        OpKind::MatMul => {
            if rank < 2 {
                return Err(format!("MatMul needs rank >= 2, got {x}"));
            }
            let mut out: Vec<Option<usize>> = dims.iter().copied().map(Some).collect();
            out[rank - 1] = None;
            Ok(out)
        }
        OpKind::BatchMatMul { batch } => {
            if rank < 3 {
                return Err(format!("BatchMatMul needs rank >= 3, got {x}"));
            }
            if !has_prefix_product(&dims[..rank - 1], *batch) {
                return Err(format!("no leading axes of {x} multiply to batch {batch}"));
            }
            let mut out: Vec<Option<usize>> = dims.iter().copied().map(Some).collect();
            out[rank - 1] = None;
            Ok(out)
        }
        OpKind::LayerNorm { .. } | OpKind::BatchNorm { .. } => {
            norm_channels(x, 1)?;
            same()
        }
        OpKind::GroupNorm { groups, .. } => {
            norm_channels(x, *groups)?;
            same()
        }
        OpKind::ReLU | OpKind::Tanh => same(),
        OpKind::Softmax { axis } => {
            if *axis >= rank {
                return Err(format!("softmax axis {axis} out of range for {x}"));
            }
            same()
        }
        OpKind::MaxPool2D { kernel, stride } | OpKind::MeanPool2D { kernel, stride } => {
            if rank < 3 {
                return Err(format!("pooling needs rank >= 3, got {x}"));
            }
            if *kernel == 0 || *stride == 0 {
                return Err("pooling kernel and stride must be >= 1".into());
            }
            let mut out: Vec<Option<usize>> = dims.iter().copied().map(Some).collect();
            for axis in [rank - 2, rank - 1] {
                let extent = dims[axis];
                if *kernel > extent || !(extent - kernel).is_multiple_of(*stride) {
                    return Err(format!(
                        "pool window {kernel}/stride {stride} overhangs extent {extent} of {x}"
                    ));
                }
                out[axis] = Some((extent - kernel) / stride + 1);
            }
            Ok(out)
        }
        OpKind::Add | OpKind::Mul => {
            if inputs[1].dims != *dims {
                return Err(format!("operand shapes differ: {x} vs {}", inputs[1]));
            }
            same()
        }
        OpKind::Concat { axis } => {
            if *axis >= rank {
                return Err(format!("concat axis {axis} out of range for {x}"));
            }
            let mut total = 0;
            for s in inputs {
                if s.rank() != rank
                    || s.dims
                        .iter()
                        .zip(dims)
                        .enumerate()
                        .any(|(i, (a, b))| i != *axis && a != b)
                {
                    return Err(format!("cannot concat {s} with {x} on axis {axis}"));
                }
                total += s.dims[*axis];
            }
            let mut out: Vec<Option<usize>> = dims.iter().copied().map(Some).collect();
            out[*axis] = Some(total);
            Ok(out)
        }
        OpKind::Reshape { shape } => resolve_reshape(x.numel(), shape)
            .map(|d| d.into_iter().map(Some).collect())
            .map_err(|e| format!("{e} (input {x})")),
        OpKind::Transpose { perm } => {
            if !is_permutation(perm, rank) {
                return Err(format!("{perm:?} is not a permutation of rank {rank}"));
            }
            Ok(perm.iter().map(|&p| Some(dims[p])).collect())
        }
        OpKind::Pack { axis, stack } => {
            if inputs.iter().any(|s| s.dims != *dims) {
                return Err("pack inputs must share one shape".into());
            }
            let mut out: Vec<Option<usize>> = dims.iter().copied().map(Some).collect();
            if *stack {
                if *axis > rank {
                    return Err(format!("pack axis {axis} out of range for {x}"));
                }
                out.insert(*axis, Some(inputs.len()));
            } else {
                if *axis >= rank {
                    return Err(format!("pack axis {axis} out of range for {x}"));
                }
                out[*axis] = Some(dims[*axis] * inputs.len());
            }
            Ok(out)
        }
        OpKind::Unpack { axis, count, stack } => {
            if *axis >= rank || *count == 0 {
                return Err(format!("unpack axis {axis} / count {count} invalid for {x}"));
            }
            let mut out: Vec<Option<usize>> = dims.iter().copied().map(Some).collect();
            if *stack {
                if dims[*axis] != *count {
                    return Err(format!("unpack count {count} != extent {} of {x}", dims[*axis]));
                }
                out.remove(*axis);
            } else {
                if !dims[*axis].is_multiple_of(*count) {
                    return Err(format!("unpack count {count} does not divide extent of {x}"));
                }
                out[*axis] = Some(dims[*axis] / count);
            }
            Ok(out)
        }
    }
}

fn conv_output(
    x: &TensorSpec,
    kernel: usize,
    stride: usize,
    padding: usize,
    groups: usize,
) -> Result<Vec<Option<usize>>, String> {
    if x.rank() != 4 {
        return Err(format!("convolution input must be (N, C, H, W), got {x}"));
    }
    if kernel == 0 || stride == 0 || groups == 0 {
        return Err("kernel, stride and groups must be >= 1".into());
    }
    if !x.dims[1].is_multiple_of(groups) {
        return Err(format!("groups {groups} do not divide {} input channels", x.dims[1]));
    }
    let mut out = vec![Some(x.dims[0]), None, None, None];
    for axis in [2, 3] {
        let padded = x.dims[axis] + 2 * padding;
        if kernel > padded {
            return Err(format!("kernel {kernel} exceeds padded extent {padded}"));
        }
        out[axis] = Some((padded - kernel) / stride + 1);
    }
    Ok(out)
}

fn norm_channels(x: &TensorSpec, groups: usize) -> Result<usize, String> {
    if !(2..=4).contains(&x.rank()) {
        return Err(format!("normalization needs rank 2..=4, got {x}"));
    }
    let c = x.dims[x.channel_axis().expect("rank 2..=4 has a channel axis")];
    if groups == 0 || !c.is_multiple_of(groups) {
        return Err(format!("groups {groups} do not divide {c} channels"));
    }
    Ok(c)
}

fn has_prefix_product(dims: &[usize], target: usize) -> bool {
    let mut acc = 1;
    for &d in dims {
        acc *= d;
        if acc == target {
            return true;
        }
        if acc > target {
            break;
        }
    }
    false
}

pub(crate) fn is_permutation(perm: &[usize], rank: usize) -> bool {
    let mut seen = vec![false; rank];
    perm.len() == rank && perm.iter().all(|&p| p < rank && !std::mem::replace(&mut seen[p], true))
}

/// Resolves a reshape target against an element count.
pub fn resolve_reshape(numel: usize, shape: &[i64]) -> Result<Vec<usize>, String> {
    let mut infer = None;
    let mut known = 1usize;
    for (i, &d) in shape.iter().enumerate() {
        match d {
            -1 if infer.is_none() => infer = Some(i),
            -1 => return Err(format!("reshape {shape:?} has more than one -1")),
            d if d >= 1 => known *= d as usize,
            _ => return Err(format!("reshape {shape:?} has an invalid extent {d}")),
        }
    }
    if shape.is_empty() {
        return Err("reshape target must have rank >= 1".into());
    }
    let mut out: Vec<usize> = shape.iter().map(|&d| d.max(1) as usize).collect();
    match infer {
        Some(i) => {
            if !numel.is_multiple_of(known) || numel / known == 0 {
                return Err(format!("cannot reshape {numel} elements to {shape:?}"));
            }
            out[i] = numel / known;
        }
        None if known != numel => return Err(format!("cannot reshape {numel} elements to {shape:?}")),
        None => {}
    }
    Ok(out)
}

/// Weight specs for one node in slot order, derived from its input and
/// output specs. Only the slots the node actually references are returned.
pub fn node_weight_specs(node: &OpNode, input: &TensorSpec) -> Result<Vec<TensorSpec>, String> {
    let dtype = input.dtype;
    let out = &node.output;
    let last = |s: &TensorSpec| s.dims.last().copied().unwrap_or(0);
    let channels = |s: &TensorSpec| s.channel_axis().map(|a| s.dims[a]);
    let full: Vec<Vec<usize>> = match &node.kind {
        OpKind::Conv2D { kernel, .. } | OpKind::GroupedConv2D { kernel, .. } => {
            let groups = node.kind.groups().unwrap_or(1);
            if input.rank() != 4 || out.rank() != 4 {
                return Err("convolution specs must be rank 4".into());
            }
            let c_out = out.dims[1];
            vec![vec![c_out, input.dims[1] / groups, *kernel, *kernel], vec![c_out]]
        }
        OpKind::MatMul => vec![vec![last(input), last(out)], vec![last(out)]],
        OpKind::BatchMatMul { batch } => {
            vec![vec![*batch, last(input), last(out)], vec![*batch, last(out)]]
        }
        OpKind::LayerNorm { .. } | OpKind::GroupNorm { .. } | OpKind::BatchNorm { .. } => {
            let c = channels(input).ok_or("normalization input has no channel axis")?;
            vec![vec![c]; 4]
        }
        _ => Vec::new(),
    };
    Ok(full
        .into_iter()
        .take(node.weights.len())
        .map(|d| TensorSpec::new(dtype, d))
        .collect())
}

/// Every weight name referenced by the graph with its required spec.
pub fn weight_specs(graph: &Graph) -> Result<BTreeMap<String, TensorSpec>, IrError> {
    let mut specs: BTreeMap<String, TensorSpec> = BTreeMap::new();
    for node in &graph.nodes {
        if node.weights.is_empty() {
            continue;
        }
        let schema = |message: String| IrError::Schema {
            node: node.id.clone(),
            message,
        };
        let input = node
            .inputs
            .first()
            .and_then(|e| graph.edge_spec(e))
            .ok_or_else(|| schema("input does not resolve".into()))?;
        let node_specs = node_weight_specs(node, input).map_err(schema)?;
        for (name, spec) in node.weights.iter().zip(node_specs) {
            if let Some(prev) = specs.get(name) {
                if !prev.same_shape(&spec) {
                    return Err(schema(format!(
                        "weight `{name}` is shared with conflicting specs {prev} and {spec}"
                    )));
                }
            } else {
                specs.insert(name.clone(), spec);
            }
        }
    }
    Ok(specs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::DType;

    #[test]
    fn reshape_inference() {
        assert_eq!(resolve_reshape(24, &[-1, 6]).unwrap(), vec![4, 6]);
        assert_eq!(resolve_reshape(24, &[2, 3, 4]).unwrap(), vec![2, 3, 4]);
        assert!(resolve_reshape(24, &[-1, -1]).is_err());
        assert!(resolve_reshape(24, &[5, -1]).is_err());
        assert!(resolve_reshape(24, &[0, 24]).is_err());
    }

    #[test]
    fn conv_shapes() {
        let x = TensorSpec::new(DType::F32, [2, 4, 8, 8]);
        let kind = OpKind::GroupedConv2D {
            kernel: 3,
            stride: 2,
            padding: 1,
            groups: 2,
        };
        let out = expected_output(&kind, &[&x]).unwrap();
        assert_eq!(out, vec![Some(2), None, Some(4), Some(4)]);
        let bad = OpKind::GroupedConv2D {
            kernel: 3,
            stride: 1,
            padding: 0,
            groups: 3,
        };
        assert!(expected_output(&bad, &[&x]).is_err());
    }

    #[test]
    fn pool_overhang_rejected() {
        let x = TensorSpec::new(DType::F32, [1, 1, 5, 5]);
        let ok = OpKind::MaxPool2D { kernel: 3, stride: 2 };
        assert_eq!(
            expected_output(&ok, &[&x]).unwrap(),
            vec![Some(1), Some(1), Some(2), Some(2)]
        );
        let bad = OpKind::MaxPool2D { kernel: 2, stride: 2 };
        assert!(expected_output(&bad, &[&x]).is_err());
    }

    #[test]
    fn batch_matmul_prefix() {
        let x = TensorSpec::new(DType::F32, [3, 2, 5, 4]);
        assert!(expected_output(&OpKind::BatchMatMul { batch: 6 }, &[&x]).is_ok());
        assert!(expected_output(&OpKind::BatchMatMul { batch: 3 }, &[&x]).is_ok());
        assert!(expected_output(&OpKind::BatchMatMul { batch: 4 }, &[&x]).is_err());
    }
}
