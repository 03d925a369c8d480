//! Graph executor over the reference kernels.

use std::collections::{BTreeMap, HashMap};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::ir::{topological_order, validate, EdgeRef, Graph, OpKind, OpNode};
use crate::kernels;
use crate::tensor::{TensorError, TensorValue};
use crate::weights::WeightStore;

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("graph is not executable: {0}")]
    Invalid(String),
    #[error("graph input `{0}` was not provided")]
    MissingInput(String),
    #[error("`{0}` is not an input of the graph")]
    UnexpectedInput(String),
    #[error("input `{name}`: expected {expected} (any leading extent), got {found}")]
    InputSpec {
        name: String,
        expected: String,
        found: String,
    },
    #[error("node `{node}`: weight `{name}` is missing")]
    MissingWeight { node: String, name: String },
    #[error("node `{node}`: {source}")]
    Kernel {
        node: String,
        #[source]
        source: TensorError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExecOptions {
    /// Keep every node's output values in the trace.
    pub record_values: bool,
}

impl Default for ExecOptions {
    fn default() -> Self {
        ExecOptions { record_values: true }
    }
}

#[derive(Debug, Clone)]
pub struct TraceEntry {
    pub node: String,
    pub kind: &'static str,
    /// Empty unless values were recorded.
    pub outputs: Vec<TensorValue>,
    pub elapsed: Duration,
}

#[derive(Debug, Clone, Default)]
pub struct ExecTrace {
    pub entries: Vec<TraceEntry>,
    pub invocations: usize,
}

impl ExecTrace {
    pub fn total_time(&self) -> Duration {
        self.entries.iter().map(|e| e.elapsed).sum()
    }

    pub fn entry(&self, node: &str) -> Option<&TraceEntry> {
        self.entries.iter().find(|e| e.node == node)
    }
}

pub fn execute(
    graph: &Graph,
    weights: &WeightStore,
    inputs: &BTreeMap<String, TensorValue>,
) -> Result<(Vec<TensorValue>, ExecTrace), ExecError> {
    execute_with(graph, weights, inputs, ExecOptions::default())
}

/// Runs every node in topological order and returns the graph outputs in
/// declaration order.
///
/// The leading extent of each graph input is free, so a graph built for
/// batch 1 runs unchanged on any batch size. Intermediate values are dropped
/// as soon as their last consumer has run.
pub fn execute_with(
    graph: &Graph,
    weights: &WeightStore,
    inputs: &BTreeMap<String, TensorValue>,
    options: ExecOptions,
) -> Result<(Vec<TensorValue>, ExecTrace), ExecError> {
    if let Some(d) = validate(graph).into_iter().next() {
        return Err(ExecError::Invalid(d.to_string()));
    }
    let order = topological_order(graph).map_err(|e| ExecError::Invalid(e.to_string()))?;

    for name in inputs.keys() {
        if graph.input(name).is_none() {
            return Err(ExecError::UnexpectedInput(name.clone()));
        }
    }

    let mut remaining: HashMap<EdgeRef, usize> = HashMap::new();
    for edge in graph.nodes.iter().flat_map(|n| &n.inputs).chain(&graph.outputs) {
        *remaining.entry(edge.clone()).or_default() += 1;
    }

    let mut values: HashMap<EdgeRef, TensorValue> = HashMap::new();
    for input in &graph.inputs {
        let value = inputs
            .get(&input.name)
            .ok_or_else(|| ExecError::MissingInput(input.name.clone()))?;
        if !value.spec().matches_modulo_batch(&input.spec) {
            return Err(ExecError::InputSpec {
                name: input.name.clone(),
                expected: input.spec.to_string(),
                found: value.spec().to_string(),
            });
        }
        values.insert(
            EdgeRef::of(input.name.clone()),
            value.clone().with_layout(input.spec.layout),
        );
    }

    let index = graph.node_index();
    let mut trace = ExecTrace::default();
    for id in order {
        let node = &graph.nodes[index[id]];
        let args: Vec<&TensorValue> = node.inputs.iter().map(|e| &values[e]).collect();
        let ws = node
            .weights
            .iter()
            .map(|name| {
                weights.tensors.get(name).ok_or_else(|| ExecError::MissingWeight {
                    node: node.id.clone(),
                    name: name.clone(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;

        let start = Instant::now();
        let outputs = run_node(node, &args, &ws).map_err(|source| ExecError::Kernel {
            node: node.id.clone(),
            source,
        })?;
        let elapsed = start.elapsed();
        trace.invocations += 1;

        let outputs: Vec<TensorValue> = outputs.into_iter().map(|t| t.with_layout(node.output.layout)).collect();
        trace.entries.push(TraceEntry {
            node: node.id.clone(),
            kind: node.kind.name(),
            outputs: if options.record_values {
                outputs.clone()
            } else {
                Vec::new()
            },
            elapsed,
        });

        for edge in &node.inputs {
            let left = remaining.get_mut(edge).expect("every input edge is counted");
            *left -= 1;
            if *left == 0 {
                values.remove(edge);
            }
        }
        for (i, value) in outputs.into_iter().enumerate() {
            let edge = EdgeRef::new(node.id.clone(), i);
            if remaining.contains_key(&edge) {
                values.insert(edge, value);
            }
        }
    }

    let outputs = graph.outputs.iter().map(|e| values[e].clone()).collect();
    Ok((outputs, trace))
}

/// Applies one node's kernel.
pub fn run_node(node: &OpNode, args: &[&TensorValue], w: &[&TensorValue]) -> Result<Vec<TensorValue>, TensorError> {
    let x = args[0];
    let one = |t: TensorValue| Ok(vec![t]);
    match &node.kind {
        OpKind::Conv2D { stride, padding, .. } => one(kernels::conv2d(x, w[0], w.get(1).copied(), *stride, *padding)?),
        OpKind::GroupedConv2D {
            stride,
            padding,
            groups,
            ..
        } => one(kernels::grouped_conv2d(
            x,
            w[0],
            w.get(1).copied(),
            *stride,
            *padding,
            *groups,
        )?),
        OpKind::MatMul => one(kernels::matmul(x, w[0], w.get(1).copied())?),
        OpKind::BatchMatMul { .. } => one(kernels::batch_matmul(x, w[0], w.get(1).copied())?),
        OpKind::LayerNorm { eps } => one(kernels::layer_norm(x, w[0], w[1], *eps)?),
        OpKind::GroupNorm { groups, eps } => one(kernels::group_norm(x, w[0], w[1], *groups, *eps)?),
        OpKind::BatchNorm { eps } => one(kernels::batch_norm_inference(x, w[0], w[1], w[2], w[3], *eps)?),
        OpKind::ReLU => one(kernels::relu(x)?),
        OpKind::Tanh => one(kernels::tanh(x)?),
        OpKind::Softmax { axis } => one(kernels::softmax(x, *axis)?),
        OpKind::MaxPool2D { kernel, stride } => one(kernels::max_pool2d(x, *kernel, *stride)?),
        OpKind::MeanPool2D { kernel, stride } => one(kernels::mean_pool2d(x, *kernel, *stride)?),
        OpKind::Add => one(kernels::add(x, args[1])?),
        OpKind::Mul => one(kernels::mul(x, args[1])?),
        OpKind::Concat { axis } => one(kernels::concat(args, *axis)?),
        OpKind::Reshape { shape } => one(kernels::reshape(x, shape)?),
        OpKind::Transpose { perm } => one(kernels::transpose(x, perm)?),
        OpKind::Pack { axis, stack: true } => one(kernels::pack(args, *axis)?),
        OpKind::Pack { axis, stack: false } => one(kernels::concat(args, *axis)?),
        OpKind::Unpack {
            axis,
            count,
            stack: true,
        } => kernels::unpack(x, *count, *axis),
        OpKind::Unpack {
            axis,
            count,
            stack: false,
        } => kernels::split(x, *axis, *count),
    }
}
