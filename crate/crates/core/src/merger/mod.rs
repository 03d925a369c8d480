//! Fuses `M` copies of one architecture into a single graph.
//!
//! Every op is replaced by its counterpart from [`crate::rules`] and tagged
//! with a packing dim. Edges whose endpoints disagree get a
//! transpose+reshape glue pair; graph inputs are joined by `Pack` nodes and
//! graph outputs split by `Unpack` nodes, so the result is a plain,
//! self-contained graph.

mod backbone;
mod explain;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ir::{
    channel_axis, topological_order, validate, weight_specs, EdgeRef, Graph, IrError, MergeDim, OpKind, OpNode,
    TensorSpec,
};
use crate::rules::{allowed_dims, merge_weights, merged_kind, rule_for, ArchitectureMismatch};
use crate::tensor::TensorValue;
use crate::weights::WeightStore;

pub use backbone::{backbone_subgraph, compose_with_head, merge_backbone, Head};
pub use explain::explain;

/// Graph metadata key holding the JSON-encoded [`MergeInfo`].
pub const MERGE_METADATA_KEY: &str = "netmerge.merge";

#[derive(Debug, Error)]
pub enum MergeError {
    #[error("graph cannot be merged: {0}")]
    Invalid(String),
    #[error(transparent)]
    Ir(#[from] IrError),
    #[error("at least one model is required")]
    NoModels,
    #[error("architecture mismatch: {0}")]
    ArchitectureMismatch(#[from] ArchitectureMismatch),
    #[error("architecture mismatch: model {model} has no weight `{name}`")]
    MissingWeight { model: usize, name: String },
    #[error("architecture mismatch: model {model} declares different weight names than model 0")]
    WeightNames { model: usize },
    #[error("architecture mismatch: weight `{name}` of model {model} is {found}, the graph needs {expected}")]
    WeightSpec {
        model: usize,
        name: String,
        expected: String,
        found: String,
    },
    #[error("node `{node}`: no packing satisfies its axis constraints")]
    Unsatisfiable { node: String },
    #[error("the backbone is empty")]
    EmptyBackbone,
    #[error("`{0}` is not a node of the graph")]
    UnknownNode(String),
    #[error("backbone is not prefix-closed: `{node}` consumes `{parent}`, which is outside the backbone")]
    NotPrefixClosed { node: String, parent: String },
    #[error("head {model}: {message}")]
    Head { model: usize, message: String },
    #[error("merge metadata: {0}")]
    Metadata(String),
}

/// Where a node of the merged graph came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Provenance {
    Source { node: String },
    Glue,
    Head { model: usize, node: String },
}

/// One source op and what it became.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodePlan {
    pub source: String,
    pub source_kind: String,
    pub merged: String,
    pub merged_kind: String,
    pub dim: MergeDim,
}

/// A transpose+reshape pair spliced onto one source edge.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlueRecord {
    pub producer: String,
    pub consumer: String,
    pub from: MergeDim,
    pub to: MergeDim,
    pub nodes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputPlan {
    pub name: String,
    pub dim: MergeDim,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeStats {
    pub source_nodes: usize,
    pub source_edges: usize,
    pub merged_nodes: usize,
    /// Source ops merged; one per source node.
    pub node_visits: usize,
    /// Edge dims read while deciding packings.
    pub edge_inspections: usize,
    /// Glue instances, each two nodes.
    pub glue_count: usize,
    pub pack_nodes: usize,
    pub unpack_nodes: usize,
    pub head_nodes: usize,
    pub weight_bytes_before: usize,
    pub weight_bytes_after: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MergeInfo {
    pub num_models: usize,
    /// Source ops in merge order.
    pub nodes: Vec<NodePlan>,
    pub provenance: BTreeMap<String, Provenance>,
    pub inputs: Vec<InputPlan>,
    /// Packing each source output is split from.
    pub outputs: Vec<MergeDim>,
    /// Number of graph outputs belonging to each model; outputs are model-major.
    pub outputs_per_model: Vec<usize>,
    pub glue: Vec<GlueRecord>,
    pub stats: MergeStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergedGraph {
    pub graph: Graph,
    pub info: MergeInfo,
}

/// Name of model `m`'s copy of a source graph input.
pub fn model_input_name(name: &str, m: usize) -> String {
    format!("{name}@{m}")
}

impl MergedGraph {
    pub fn num_models(&self) -> usize {
        self.info.num_models
    }

    /// Recovers the merge record from a merged graph, e.g. after deserializing it.
    pub fn from_graph(graph: Graph) -> Result<Self, MergeError> {
        let text = graph
            .metadata
            .get(MERGE_METADATA_KEY)
            .ok_or_else(|| MergeError::Metadata("graph carries no merge record".into()))?;
        let info: MergeInfo = serde_json::from_str(text).map_err(|e| MergeError::Metadata(e.to_string()))?;
        if info.outputs_per_model.len() != info.num_models
            || info.outputs_per_model.iter().sum::<usize>() != graph.outputs.len()
        {
            return Err(MergeError::Metadata("output counts disagree with the graph".into()));
        }
        Ok(MergedGraph { graph, info })
    }

    fn sync_metadata(&mut self) {
        let text = serde_json::to_string(&self.info).expect("merge info serializes");
        self.graph.metadata.insert(MERGE_METADATA_KEY.to_owned(), text);
    }

    /// Renames per-model inputs to the merged graph's input names.
    pub fn pack_inputs(&self, per_model: &[BTreeMap<String, TensorValue>]) -> BTreeMap<String, TensorValue> {
        per_model
            .iter()
            .enumerate()
            .flat_map(|(m, inputs)| inputs.iter().map(move |(k, v)| (model_input_name(k, m), v.clone())))
            .collect()
    }

    /// Splits the merged graph's outputs into per-model lists.
    pub fn split_outputs(&self, outputs: Vec<TensorValue>) -> Vec<Vec<TensorValue>> {
        let mut it = outputs.into_iter();
        self.info
            .outputs_per_model
            .iter()
            .map(|&n| it.by_ref().take(n).collect())
            .collect()
    }
}

/// Merges `stores.len()` models sharing `graph`.
pub fn merge(graph: &Graph, stores: &[WeightStore]) -> Result<(MergedGraph, WeightStore), MergeError> {
    let first = stores.first().ok_or(MergeError::NoModels)?;
    for (m, store) in stores.iter().enumerate().skip(1) {
        if !store.names().eq(first.names()) {
            return Err(MergeError::WeightNames { model: m });
        }
    }
    let mut merged = merge_structure(graph, stores.len())?;
    let weights = merge_store(graph, stores)?;
    merged.info.stats.weight_bytes_before = required_bytes(graph, stores);
    merged.info.stats.weight_bytes_after = weights.total_bytes();
    merged.sync_metadata();
    Ok((merged, weights))
}

fn required_bytes(graph: &Graph, stores: &[WeightStore]) -> usize {
    let mut names: Vec<&String> = graph.nodes.iter().flat_map(|n| &n.weights).collect();
    names.sort();
    names.dedup();
    stores
        .iter()
        .flat_map(|s| names.iter().filter_map(|n| s.tensors.get(*n)))
        .map(|t| t.spec().size_in_bytes())
        .sum()
}

/// Joins every weight the graph references, slot by slot, in model order.
pub fn merge_store(graph: &Graph, stores: &[WeightStore]) -> Result<WeightStore, MergeError> {
    if stores.is_empty() {
        return Err(MergeError::NoModels);
    }
    let specs = weight_specs(graph)?;
    let mut merged = WeightStore::new(0);
    for node in &graph.nodes {
        let rule = rule_for(node.kind.tag());
        for (slot, name) in node.weights.iter().enumerate() {
            if merged.tensors.contains_key(name) {
                continue;
            }
            let per_model = stores
                .iter()
                .enumerate()
                .map(|(m, s)| {
                    let t = s.tensors.get(name).ok_or_else(|| MergeError::MissingWeight {
                        model: m,
                        name: name.clone(),
                    })?;
                    if !t.spec().same_shape(&specs[name]) {
                        return Err(MergeError::WeightSpec {
                            model: m,
                            name: name.clone(),
                            expected: specs[name].to_string(),
                            found: t.spec().to_string(),
                        });
                    }
                    Ok(t)
                })
                .collect::<Result<Vec<_>, _>>()?;
            let recipe = rule.weights[slot].recipe;
            merged.insert(name.clone(), merge_weights(name, recipe, &per_model)?);
        }
    }
    Ok(merged)
}

/// Picks a packing from `allowed` by majority of `votes`; Channel wins ties
/// and Batch is the default when nobody votes.
pub(crate) fn choose_dim(node: &str, allowed: &[MergeDim], votes: &[MergeDim]) -> Result<MergeDim, MergeError> {
    if allowed.is_empty() {
        return Err(MergeError::Unsatisfiable { node: node.to_owned() });
    }
    if let [only] = allowed {
        return Ok(*only);
    }
    let count = |d: MergeDim| votes.iter().filter(|&&v| v == d).count();
    let has = |d: MergeDim| allowed.contains(&d);
    Ok(match (has(MergeDim::Batch), has(MergeDim::Channel)) {
        (true, true) if votes.is_empty() => MergeDim::Batch,
        (true, true) if count(MergeDim::Batch) > count(MergeDim::Channel) => MergeDim::Batch,
        (_, true) => MergeDim::Channel,
        _ => MergeDim::Batch,
    })
}

/// Per-model spec `spec` as packed for `m` models under `dim`.
pub fn packed_spec(spec: &TensorSpec, dim: MergeDim, m: usize) -> TensorSpec {
    let mut dims = spec.dims.clone();
    match dim {
        MergeDim::Batch => dims.insert(0, m),
        MergeDim::Channel => dims[spec.channel_axis().expect("Channel packing needs a channel axis")] *= m,
        MergeDim::DontCare => {}
    }
    TensorSpec::new(spec.dtype, dims).with_layout(dim.layout())
}

/// The merged graph for `m` models; a pure function of the structure.
pub fn merge_structure(graph: &Graph, m: usize) -> Result<MergedGraph, MergeError> {
    if m == 0 {
        return Err(MergeError::NoModels);
    }
    if graph.is_merged() {
        return Err(MergeError::Invalid("graph is already merged".into()));
    }
    if let Some(d) = validate(graph).into_iter().next() {
        return Err(MergeError::Invalid(d.to_string()));
    }
    let order = topological_order(graph)?;
    let index = graph.node_index();
    let mut stats = MergeStats {
        source_nodes: graph.nodes.len(),
        source_edges: graph.num_edges(),
        ..MergeStats::default()
    };

    let rank_of = |node: &OpNode| graph.edge_spec(&node.inputs[0]).expect("validated").rank();

    // Forward pass: a node takes its rule's dim, or the majority of its
    // parents' dims. Nodes fed only by graph inputs or unresolved nodes wait.
    let mut dims: HashMap<&str, MergeDim> = HashMap::new();
    let mut allowed: HashMap<&str, Vec<MergeDim>> = HashMap::new();
    for &id in &order {
        let node = &graph.nodes[index[id]];
        let ok = allowed_dims(&node.kind, rank_of(node));
        let mut votes = Vec::new();
        for edge in &node.inputs {
            stats.edge_inspections += 1;
            if let Some(&d) = dims.get(edge.node.as_str()) {
                votes.push(d);
            }
        }
        if ok.len() == 1 || !votes.is_empty() {
            dims.insert(id, choose_dim(id, &ok, &votes)?);
        }
        allowed.insert(id, ok);
    }

    // Finalize pass: unresolved chains follow their consumers, settled from
    // the bottom up so every consumer is already decided.
    let consumers = graph.consumers();
    let consumer_votes = |name: &str, dims: &HashMap<&str, MergeDim>, stats: &mut MergeStats| {
        let cs = consumers.get(name).map(Vec::as_slice).unwrap_or_default();
        stats.edge_inspections += cs.len();
        cs.iter().map(|c| dims[c]).collect::<Vec<_>>()
    };
    for &id in order.iter().rev() {
        if !dims.contains_key(id) {
            let votes = consumer_votes(id, &dims, &mut stats);
            let d = choose_dim(id, &allowed[id], &votes)?;
            dims.insert(id, d);
        }
    }
    let mut input_dims = Vec::with_capacity(graph.inputs.len());
    for input in &graph.inputs {
        let votes = consumer_votes(&input.name, &dims, &mut stats);
        let ok = if input.spec.channel_axis().is_some() {
            vec![MergeDim::Batch, MergeDim::Channel]
        } else {
            vec![MergeDim::Batch]
        };
        input_dims.push(choose_dim(&input.name, &ok, &votes)?);
    }

    // Emission.
    let mut out = Graph::new();
    out.metadata = graph.metadata.clone();
    let mut provenance = BTreeMap::new();
    let mut edge_map: HashMap<EdgeRef, (EdgeRef, MergeDim)> = HashMap::new();
    let mut input_plan = Vec::new();

    for (input, &dim) in graph.inputs.iter().zip(&input_dims) {
        let parts: Vec<EdgeRef> = (0..m)
            .map(|i| out.add_input(model_input_name(&input.name, i), input.spec.clone()))
            .collect();
        let id = format!("pack::{}", input.name);
        let kind = match dim {
            MergeDim::Channel => OpKind::Pack {
                axis: input.spec.channel_axis().expect("checked above"),
                stack: false,
            },
            _ => OpKind::Pack { axis: 0, stack: true },
        };
        let edge = out.add_node(OpNode::new(&id, kind, parts, packed_spec(&input.spec, dim, m)));
        provenance.insert(id, Provenance::Glue);
        stats.pack_nodes += 1;
        edge_map.insert(EdgeRef::of(input.name.clone()), (edge, dim));
        input_plan.push(InputPlan {
            name: input.name.clone(),
            dim,
        });
    }

    let mut glue = Vec::new();
    let mut plans = Vec::with_capacity(order.len());
    for &id in &order {
        let node = &graph.nodes[index[id]];
        let dim = dims[id];
        stats.node_visits += 1;

        let mut inputs = Vec::with_capacity(node.inputs.len());
        for edge in &node.inputs {
            let (src, src_dim) = edge_map[edge].clone();
            if src_dim == dim {
                inputs.push(src);
                continue;
            }
            let spec = graph.edge_spec(edge).expect("validated");
            let n = glue.len();
            let (edge_out, nodes) = emit_glue(&mut out, src, spec, src_dim, dim, m, n);
            for g in &nodes {
                provenance.insert(g.clone(), Provenance::Glue);
            }
            glue.push(GlueRecord {
                producer: edge.to_string(),
                consumer: id.to_owned(),
                from: src_dim,
                to: dim,
                nodes,
            });
            inputs.push(edge_out);
        }

        let merged_id = format!("merged::{id}");
        let kind = merged_kind(&node.kind, m, dim);
        plans.push(NodePlan {
            source: id.to_owned(),
            source_kind: node.kind.to_string(),
            merged: merged_id.clone(),
            merged_kind: kind.to_string(),
            dim,
        });
        let merged = OpNode::new(&merged_id, kind, inputs, packed_spec(&node.output, dim, m))
            .with_weights(node.weights.iter().cloned());
        out.add_node(merged);
        provenance.insert(merged_id.clone(), Provenance::Source { node: id.to_owned() });
        for i in 0..node.kind.num_outputs() {
            edge_map.insert(EdgeRef::new(id, i), (EdgeRef::new(merged_id.clone(), i), dim));
        }
    }

    let mut output_plan = Vec::with_capacity(graph.outputs.len());
    let mut unpacks = Vec::with_capacity(graph.outputs.len());
    for (k, edge) in graph.outputs.iter().enumerate() {
        let (src, dim) = edge_map[edge].clone();
        let spec = graph.edge_spec(edge).expect("validated").clone();
        let kind = match dim {
            MergeDim::Channel => OpKind::Unpack {
                axis: spec.channel_axis().expect("Channel packing has a channel axis"),
                count: m,
                stack: false,
            },
            _ => OpKind::Unpack {
                axis: 0,
                count: m,
                stack: true,
            },
        };
        let id = format!("unpack::{k}");
        out.add_node(OpNode::new(&id, kind, vec![src], spec));
        provenance.insert(id.clone(), Provenance::Glue);
        stats.unpack_nodes += 1;
        output_plan.push(dim);
        unpacks.push(id);
    }
    for i in 0..m {
        for id in &unpacks {
            out.add_output(EdgeRef::new(id.clone(), i));
        }
    }

    stats.glue_count = glue.len();
    stats.merged_nodes = out.nodes.len();
    let mut merged = MergedGraph {
        graph: out,
        info: MergeInfo {
            num_models: m,
            nodes: plans,
            provenance,
            inputs: input_plan,
            outputs: output_plan,
            outputs_per_model: vec![graph.outputs.len(); m],
            glue,
            stats,
        },
    };
    merged.sync_metadata();
    if let Some(d) = validate(&merged.graph).into_iter().next() {
        return Err(MergeError::Invalid(format!("merged graph failed validation: {d}")));
    }
    Ok(merged)
}

/// Converts a tensor between Batch packing `(M, N, ...)` and Channel packing
/// `(N, ..., M·C, ...)`.
///
/// Batch to Channel moves the model axis next to the channel axis and folds
/// the two: `(M, N, S, D)` becomes `(N, S, M, D)` and then `(N, S, M·D)`.
/// Channel to Batch is the exact inverse.
fn emit_glue(
    out: &mut Graph,
    src: EdgeRef,
    spec: &TensorSpec,
    from: MergeDim,
    to: MergeDim,
    m: usize,
    n: usize,
) -> (EdgeRef, Vec<String>) {
    let r = spec.rank();
    let ch = channel_axis(r).expect("glue only joins Batch and Channel packings");
    let dims: Vec<i64> = spec.dims.iter().map(|&d| d as i64).collect();
    let to_channel: Vec<usize> = (1..=ch).chain([0]).chain(ch + 1..=r).collect();
    let to_batch: Vec<usize> = [ch].into_iter().chain(0..ch).chain(ch + 1..=r).collect();
    let mut split = dims.clone();
    split[0] = -1;
    split.insert(ch, m as i64);
    let mut folded = dims.clone();
    folded[0] = -1;
    folded[ch] *= m as i64;

    let t_id = format!("transpose::{n}");
    let r_id = format!("reshape::{n}");
    let spread: Vec<usize> = {
        let mut d = spec.dims.clone();
        d.insert(ch, m);
        d
    };
    let dtype = spec.dtype;
    let end = match (from, to) {
        (MergeDim::Batch, MergeDim::Channel) => {
            let t = out.add_node(OpNode::new(
                &t_id,
                OpKind::Transpose { perm: to_channel },
                vec![src],
                TensorSpec::new(dtype, spread),
            ));
            out.add_node(OpNode::new(
                &r_id,
                OpKind::Reshape { shape: folded },
                vec![t],
                packed_spec(spec, MergeDim::Channel, m),
            ))
        }
        _ => {
            let r = out.add_node(OpNode::new(
                &r_id,
                OpKind::Reshape { shape: split },
                vec![src],
                TensorSpec::new(dtype, spread),
            ));
            out.add_node(OpNode::new(
                &t_id,
                OpKind::Transpose { perm: to_batch },
                vec![r],
                packed_spec(spec, MergeDim::Batch, m),
            ))
        }
    };
    let nodes = match (from, to) {
        (MergeDim::Batch, _) => vec![t_id, r_id],
        _ => vec![r_id, t_id],
    };
    (end, nodes)
}
