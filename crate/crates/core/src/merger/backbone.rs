//! Backbone-only merging: the shared prefix is merged, each model keeps its
//! own head.

use std::collections::{BTreeSet, HashMap, HashSet};

use super::{merge_store, merge_structure, required_bytes, MergeError, MergedGraph, Provenance};
use crate::ir::{validate, EdgeRef, Graph, OpNode};
use crate::weights::WeightStore;

/// One model's private head. Its graph inputs are bound, in order, to the
/// outputs of the backbone.
#[derive(Debug, Clone)]
pub struct Head {
    pub graph: Graph,
    pub weights: WeightStore,
}

fn head_prefix(m: usize) -> String {
    format!("head{m}::")
}

/// The backbone nodes of `graph` as a graph of their own.
///
/// Its outputs are the backbone edges read by non-backbone nodes, then the
/// backbone edges among the graph outputs, each listed once.
pub fn backbone_subgraph(graph: &Graph, backbone: &BTreeSet<String>) -> Result<Graph, MergeError> {
    if backbone.is_empty() {
        return Err(MergeError::EmptyBackbone);
    }
    for id in backbone {
        if graph.node(id).is_none() {
            return Err(MergeError::UnknownNode(id.clone()));
        }
    }
    let node_ids: HashSet<&str> = graph.nodes.iter().map(|n| n.id.as_str()).collect();
    let inside = |e: &EdgeRef| backbone.contains(&e.node);

    let mut sub = Graph::new();
    sub.metadata = graph.metadata.clone();
    let mut used_inputs = HashSet::new();
    for node in graph.nodes.iter().filter(|n| backbone.contains(&n.id)) {
        for e in &node.inputs {
            if node_ids.contains(e.node.as_str()) {
                if !inside(e) {
                    return Err(MergeError::NotPrefixClosed {
                        node: node.id.clone(),
                        parent: e.node.clone(),
                    });
                }
            } else {
                used_inputs.insert(e.node.as_str());
            }
        }
        sub.add_node(node.clone());
    }
    for input in graph.inputs.iter().filter(|i| used_inputs.contains(i.name.as_str())) {
        sub.add_input(input.name.clone(), input.spec.clone());
    }

    let exported = graph
        .nodes
        .iter()
        .filter(|n| !backbone.contains(&n.id))
        .flat_map(|n| &n.inputs)
        .chain(&graph.outputs)
        .filter(|e| inside(e));
    let mut seen = HashSet::new();
    for e in exported {
        if seen.insert(e.clone()) {
            sub.add_output(e.clone());
        }
    }
    Ok(sub)
}

/// Merges the `backbone` of `graph` across all models and appends head `m`,
/// unmerged, to model `m`'s slice of the backbone outputs.
pub fn merge_backbone(
    graph: &Graph,
    backbone: &BTreeSet<String>,
    stores: &[WeightStore],
    heads: &[Head],
) -> Result<(MergedGraph, WeightStore), MergeError> {
    if stores.is_empty() {
        return Err(MergeError::NoModels);
    }
    if heads.len() != stores.len() {
        return Err(MergeError::Head {
            model: heads.len().min(stores.len()),
            message: format!("{} heads for {} models", heads.len(), stores.len()),
        });
    }
    let sub = backbone_subgraph(graph, backbone)?;
    let mut merged = merge_structure(&sub, stores.len())?;
    let mut weights = merge_store(&sub, stores)?;
    merged.info.stats.weight_bytes_before = required_bytes(&sub, stores);

    let out = &mut merged.graph;
    out.outputs.clear();
    merged.info.outputs_per_model.clear();
    for (m, head) in heads.iter().enumerate() {
        let err = |message: String| MergeError::Head { model: m, message };
        if let Some(d) = validate(&head.graph).into_iter().next() {
            return Err(err(d.to_string()));
        }
        if head.graph.inputs.len() != sub.outputs.len() {
            return Err(err(format!(
                "takes {} inputs but the backbone exports {}",
                head.graph.inputs.len(),
                sub.outputs.len()
            )));
        }
        let mut bind: HashMap<&str, EdgeRef> = HashMap::new();
        for (i, (input, exported)) in head.graph.inputs.iter().zip(&sub.outputs).enumerate() {
            let spec = sub.edge_spec(exported).expect("backbone validated");
            if !input.spec.matches_modulo_batch(spec) {
                return Err(err(format!(
                    "input `{}` is {} but backbone output {i} is {spec}",
                    input.name, input.spec
                )));
            }
            bind.insert(input.name.as_str(), EdgeRef::new(format!("unpack::{i}"), m));
        }
        let prefix = head_prefix(m);
        let map_edge = |e: &EdgeRef| {
            bind.get(e.node.as_str())
                .cloned()
                .unwrap_or_else(|| EdgeRef::new(format!("{prefix}{}", e.node), e.output))
        };
        for node in &head.graph.nodes {
            let id = format!("{prefix}{}", node.id);
            let renamed = OpNode {
                id: id.clone(),
                kind: node.kind.clone(),
                inputs: node.inputs.iter().map(&map_edge).collect(),
                weights: node.weights.iter().map(|w| format!("{prefix}{w}")).collect(),
                output: node.output.clone(),
            };
            out.add_node(renamed);
            merged.info.provenance.insert(
                id,
                Provenance::Head {
                    model: m,
                    node: node.id.clone(),
                },
            );
            merged.info.stats.head_nodes += 1;
        }
        for e in &head.graph.outputs {
            out.add_output(map_edge(e));
        }
        merged.info.outputs_per_model.push(head.graph.outputs.len());
        for (name, value) in &head.weights.tensors {
            weights.insert(format!("{prefix}{name}"), value.clone());
        }
        merged.info.stats.weight_bytes_before += head.weights.total_bytes();
    }
    merged.info.stats.merged_nodes = merged.graph.nodes.len();
    merged.info.stats.weight_bytes_after = weights.total_bytes();
    merged.sync_metadata();
    if let Some(d) = validate(&merged.graph).into_iter().next() {
        return Err(MergeError::Invalid(format!("merged graph failed validation: {d}")));
    }
    Ok((merged, weights))
}

/// Model `m`'s full unmerged network: the backbone followed by its head.
pub fn compose_with_head(
    backbone: &Graph,
    head: &Head,
    m: usize,
    store: &WeightStore,
) -> Result<(Graph, WeightStore), MergeError> {
    let err = |message: String| MergeError::Head { model: m, message };
    if head.graph.inputs.len() != backbone.outputs.len() {
        return Err(err(format!(
            "takes {} inputs but the backbone exports {}",
            head.graph.inputs.len(),
            backbone.outputs.len()
        )));
    }
    let bind: HashMap<&str, &EdgeRef> = head
        .graph
        .inputs
        .iter()
        .map(|i| i.name.as_str())
        .zip(&backbone.outputs)
        .collect();
    let prefix = head_prefix(m);
    let map_edge = |e: &EdgeRef| match bind.get(e.node.as_str()) {
        Some(b) => (*b).clone(),
        None => EdgeRef::new(format!("{prefix}{}", e.node), e.output),
    };

    let mut full = backbone.clone();
    full.outputs = head.graph.outputs.iter().map(map_edge).collect();
    let mut weights = WeightStore::new(m);
    let names: BTreeSet<&String> = backbone.nodes.iter().flat_map(|n| &n.weights).collect();
    for name in names {
        let t = store.tensors.get(name).ok_or_else(|| MergeError::MissingWeight {
            model: m,
            name: name.clone(),
        })?;
        weights.insert(name.clone(), t.clone());
    }
    for node in &head.graph.nodes {
        full.add_node(OpNode {
            id: format!("{prefix}{}", node.id),
            kind: node.kind.clone(),
            inputs: node.inputs.iter().map(map_edge).collect(),
            weights: node.weights.iter().map(|w| format!("{prefix}{w}")).collect(),
            output: node.output.clone(),
        });
    }
    for (name, value) in &head.weights.tensors {
        weights.insert(format!("{prefix}{name}"), value.clone());
    }
    if let Some(d) = validate(&full).into_iter().next() {
        return Err(err(format!("composed network is invalid: {d}")));
    }
    Ok((full, weights))
}
