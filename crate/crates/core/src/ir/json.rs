//! JSON document form of a [`Graph`].
//!
//! ```text
//! { "nodes": [{ "id", "kind", "attrs", "inputs", "weights", "output" }],
//!   "graph_inputs": [{ "name", "spec" }],
//!   "graph_outputs": ["node:0", ...],
//!   "metadata": { ... } }
//! ```
//!
//! Weight tensors live outside the document (see [`crate::weights`]).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::{validate, EdgeRef, Graph, GraphInput, IrError, KindTag, OpKind, OpNode, TensorSpec};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGraph {
    nodes: Vec<RawNode>,
    graph_inputs: Vec<RawInput>,
    graph_outputs: Vec<String>,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNode {
    id: String,
    kind: String,
    #[serde(default)]
    attrs: Map<String, Value>,
    inputs: Vec<String>,
    #[serde(default)]
    weights: Vec<String>,
    output: TensorSpec,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInput {
    name: String,
    spec: TensorSpec,
}

/// Serializes a valid graph to pretty-printed UTF-8 JSON.
pub fn serialize(graph: &Graph) -> Result<Vec<u8>, IrError> {
    let diags = validate(graph);
    if !diags.is_empty() {
        let msgs: Vec<String> = diags.iter().map(ToString::to_string).collect();
        return Err(IrError::Invalid(msgs.join("; ")));
    }
    let raw = RawGraph {
        nodes: graph.nodes.iter().map(raw_node).collect(),
        graph_inputs: graph
            .inputs
            .iter()
            .map(|i| RawInput {
                name: i.name.clone(),
                spec: i.spec.clone(),
            })
            .collect(),
        graph_outputs: graph.outputs.iter().map(ToString::to_string).collect(),
        metadata: graph.metadata.clone(),
    };
    let mut bytes = serde_json::to_vec_pretty(&raw).expect("graph documents always serialize");
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn deserialize(bytes: &[u8]) -> Result<Graph, IrError> {
    let raw: RawGraph = serde_json::from_slice(bytes).map_err(|e| IrError::Parse {
        offset: byte_offset(bytes, e.line(), e.column()),
        message: e.to_string(),
    })?;
    let nodes = raw.nodes.into_iter().map(node_from_raw).collect::<Result<_, _>>()?;
    let outputs = raw
        .graph_outputs
        .iter()
        .map(|s| {
            s.parse().map_err(|m| IrError::Schema {
                node: "graph_outputs".into(),
                message: m,
            })
        })
        .collect::<Result<_, _>>()?;
    Ok(Graph {
        nodes,
        inputs: raw
            .graph_inputs
            .into_iter()
            .map(|i| GraphInput {
                name: i.name,
                spec: i.spec,
            })
            .collect(),
        outputs,
        metadata: raw.metadata,
    })
}

fn byte_offset(bytes: &[u8], line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start: usize = bytes
        .split_inclusive(|b| *b == b'\n')
        .take(line - 1)
        .map(<[u8]>::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(bytes.len())
}

fn raw_node(node: &OpNode) -> RawNode {
    let attrs = match &node.kind {
        OpKind::Conv2D {
            kernel,
            stride,
            padding,
        } => {
            json!({ "kernel": kernel, "stride": stride, "padding": padding })
        }
        OpKind::GroupedConv2D {
            kernel,
            stride,
            padding,
            groups,
        } => json!({ "kernel": kernel, "stride": stride, "padding": padding, "groups": groups }),
        OpKind::MatMul | OpKind::ReLU | OpKind::Tanh | OpKind::Add | OpKind::Mul => json!({}),
        OpKind::BatchMatMul { batch } => json!({ "batch": batch }),
        OpKind::LayerNorm { eps } | OpKind::BatchNorm { eps } => json!({ "eps": eps }),
        OpKind::GroupNorm { groups, eps } => json!({ "groups": groups, "eps": eps }),
        OpKind::Softmax { axis } | OpKind::Concat { axis } => json!({ "axis": axis }),
        OpKind::MaxPool2D { kernel, stride } | OpKind::MeanPool2D { kernel, stride } => {
            json!({ "kernel": kernel, "stride": stride })
        }
        OpKind::Reshape { shape } => json!({ "shape": shape }),
        OpKind::Transpose { perm } => json!({ "perm": perm }),
        OpKind::Pack { axis, stack } => json!({ "axis": axis, "stack": stack }),
        OpKind::Unpack { axis, count, stack } => json!({ "axis": axis, "count": count, "stack": stack }),
    };
    let Value::Object(attrs) = attrs else { unreachable!() };
    RawNode {
        id: node.id.clone(),
        kind: node.kind.name().to_string(),
        attrs,
        inputs: node.inputs.iter().map(ToString::to_string).collect(),
        weights: node.weights.clone(),
        output: node.output.clone(),
    }
}

struct Attrs<'a> {
    node: &'a str,
    map: Map<String, Value>,
}

impl Attrs<'_> {
    fn err(&self, message: String) -> IrError {
        IrError::Schema {
            node: self.node.to_string(),
            message,
        }
    }

    fn take(&mut self, key: &str) -> Result<Value, IrError> {
        self.map
            .remove(key)
            .ok_or_else(|| self.err(format!("missing attribute `{key}`")))
    }

    fn usize(&mut self, key: &str) -> Result<usize, IrError> {
        let v = self.take(key)?;
        v.as_u64()
            .map(|u| u as usize)
            .ok_or_else(|| self.err(format!("attribute `{key}` must be a non-negative integer, got {v}")))
    }

    fn f64(&mut self, key: &str) -> Result<f64, IrError> {
        let v = self.take(key)?;
        v.as_f64()
            .ok_or_else(|| self.err(format!("attribute `{key}` must be a number, got {v}")))
    }

    fn bool(&mut self, key: &str) -> Result<bool, IrError> {
        let v = self.take(key)?;
        v.as_bool()
            .ok_or_else(|| self.err(format!("attribute `{key}` must be a boolean, got {v}")))
    }

    fn list<T: serde::de::DeserializeOwned>(&mut self, key: &str) -> Result<Vec<T>, IrError> {
        let v = self.take(key)?;
        serde_json::from_value(v).map_err(|e| self.err(format!("attribute `{key}`: {e}")))
    }

    fn finish(self) -> Result<(), IrError> {
        match self.map.keys().next() {
            Some(extra) => Err(self.err(format!("unknown attribute `{extra}`"))),
            None => Ok(()),
        }
    }
}

fn node_from_raw(raw: RawNode) -> Result<OpNode, IrError> {
    let tag = KindTag::from_name(&raw.kind).ok_or_else(|| IrError::UnsupportedOp(raw.kind.clone()))?;
    let mut a = Attrs {
        node: &raw.id,
        map: raw.attrs,
    };
    let kind = match tag {
        KindTag::Conv2D => OpKind::Conv2D {
            kernel: a.usize("kernel")?,
            stride: a.usize("stride")?,
            padding: a.usize("padding")?,
        },
        KindTag::GroupedConv2D => OpKind::GroupedConv2D {
            kernel: a.usize("kernel")?,
            stride: a.usize("stride")?,
            padding: a.usize("padding")?,
            groups: a.usize("groups")?,
        },
        KindTag::MatMul => OpKind::MatMul,
        KindTag::BatchMatMul => OpKind::BatchMatMul {
            batch: a.usize("batch")?,
        },
        KindTag::LayerNorm => OpKind::LayerNorm { eps: a.f64("eps")? },
        KindTag::GroupNorm => OpKind::GroupNorm {
            groups: a.usize("groups")?,
            eps: a.f64("eps")?,
        },
        KindTag::BatchNorm => OpKind::BatchNorm { eps: a.f64("eps")? },
        KindTag::ReLU => OpKind::ReLU,
        KindTag::Tanh => OpKind::Tanh,
        KindTag::Softmax => OpKind::Softmax { axis: a.usize("axis")? },
        KindTag::MaxPool2D => OpKind::MaxPool2D {
            kernel: a.usize("kernel")?,
            stride: a.usize("stride")?,
        },
        KindTag::MeanPool2D => OpKind::MeanPool2D {
            kernel: a.usize("kernel")?,
            stride: a.usize("stride")?,
        },
        KindTag::Add => OpKind::Add,
        KindTag::Mul => OpKind::Mul,
        KindTag::Concat => OpKind::Concat { axis: a.usize("axis")? },
        KindTag::Reshape => OpKind::Reshape {
            shape: a.list("shape")?,
        },
        KindTag::Transpose => OpKind::Transpose { perm: a.list("perm")? },
        KindTag::Pack => OpKind::Pack {
            axis: a.usize("axis")?,
            stack: a.bool("stack")?,
        },
        KindTag::Unpack => OpKind::Unpack {
            axis: a.usize("axis")?,
            count: a.usize("count")?,
            stack: a.bool("stack")?,
        },
    };
    a.finish()?;
    let inputs = raw
        .inputs
        .iter()
        .map(|s| {
            s.parse().map_err(|m| IrError::Schema {
                node: raw.id.clone(),
                message: m,
            })
        })
        .collect::<Result<Vec<EdgeRef>, _>>()?;
    Ok(OpNode {
        id: raw.id,
        kind,
        inputs,
        weights: raw.weights,
        output: raw.output,
    })
}
