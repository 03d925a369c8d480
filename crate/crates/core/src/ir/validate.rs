use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;

use super::shape::expected_output;
use super::{topological_order, Graph, IrError, Layout};

/// One violated rule. `node` is `None` for graph-level problems.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub node: Option<String>,
    pub rule: &'static str,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.node {
            Some(node) => write!(f, "[{}] {}: {}", self.rule, node, self.message),
            None => write!(f, "[{}] {}", self.rule, self.message),
        }
    }
}

struct Diagnostics(Vec<Diagnostic>);

impl Diagnostics {
    fn push(&mut self, node: Option<&str>, rule: &'static str, message: impl Into<String>) {
        self.0.push(Diagnostic {
            node: node.map(str::to_owned),
            rule,
            message: message.into(),
        });
    }
}

/// Checks every structural rule of the IR. An empty result means the graph
/// can be executed without structural failures (weights aside).
pub fn validate(graph: &Graph) -> Vec<Diagnostic> {
    let mut diags = Diagnostics(Vec::new());
    let merged = graph.is_merged();

    if graph.outputs.is_empty() {
        diags.push(None, "no-outputs", "no outputs");
    }

    let mut names: HashSet<&str> = HashSet::new();
    for input in &graph.inputs {
        if !names.insert(&input.name) {
            diags.push(Some(&input.name), "duplicate-id", "name is declared more than once");
        }
        if input.spec.dims.is_empty() || input.spec.dims.contains(&0) {
            diags.push(
                Some(&input.name),
                "tensor-spec",
                format!("invalid extents {}", input.spec),
            );
        }
        if !merged && input.spec.layout != Layout::Unlaid {
            diags.push(Some(&input.name), "layout", "unmerged graphs carry only Unlaid tensors");
        }
    }
    for node in &graph.nodes {
        let id = Some(node.id.as_str());
        if !names.insert(&node.id) {
            diags.push(id, "duplicate-id", "name is declared more than once");
        }
        if node.output.dims.is_empty() || node.output.dims.contains(&0) {
            diags.push(id, "tensor-spec", format!("invalid extents {}", node.output));
        }
        if !merged && node.output.layout != Layout::Unlaid {
            diags.push(id, "layout", "unmerged graphs carry only Unlaid tensors");
        }
        let (slots, optional) = node.kind.tag().weight_slots();
        let n = node.weights.len();
        if n > slots.len() || n + optional < slots.len() {
            diags.push(
                id,
                "weight-arity",
                format!(
                    "{} expects {} weight(s), got {n}",
                    node.kind.name(),
                    describe_arity(slots.len(), optional)
                ),
            );
        }
    }

    let mut dangling = false;
    for node in &graph.nodes {
        for edge in &node.inputs {
            if graph.edge_spec(edge).is_none() {
                dangling = true;
                diags.push(
                    Some(&node.id),
                    "dangling-edge",
                    format!("input `{edge}` does not resolve"),
                );
            }
        }
    }
    for edge in &graph.outputs {
        if graph.edge_spec(edge).is_none() {
            dangling = true;
            diags.push(None, "dangling-edge", format!("graph output `{edge}` does not resolve"));
        }
    }

    let acyclic = match topological_order(graph) {
        Ok(_) => true,
        Err(IrError::Cycle(at)) => {
            diags.push(Some(&at), "cycle", format!("cycle detected at {at}"));
            false
        }
        Err(other) => {
            diags.push(None, "cycle", other.to_string());
            false
        }
    };

    if !dangling {
        for node in &graph.nodes {
            let inputs: Vec<_> = node.inputs.iter().filter_map(|e| graph.edge_spec(e)).collect();
            match expected_output(&node.kind, &inputs) {
                Ok(expected) => {
                    let out = &node.output;
                    let consistent = out.dtype == inputs[0].dtype
                        && out.rank() == expected.len()
                        && out.dims.iter().zip(&expected).all(|(d, e)| e.is_none_or(|e| e == *d));
                    if !consistent {
                        let shown: Vec<String> = expected
                            .iter()
                            .map(|e| e.map_or("?".to_string(), |d| d.to_string()))
                            .collect();
                        diags.push(
                            Some(&node.id),
                            "shape",
                            format!("declared output {out} but inputs imply [{}]", shown.join(", ")),
                        );
                    }
                }
                Err(message) => diags.push(Some(&node.id), "shape", message),
            }
        }
    }

    if acyclic && !dangling {
        let reachable = reachable_from_inputs(graph);
        for edge in &graph.outputs {
            if !reachable.contains(edge.node.as_str()) {
                diags.push(
                    Some(&edge.node),
                    "unreachable-output",
                    format!("graph output `{edge}` is not reachable from any graph input"),
                );
            }
        }
    }

    diags.0
}

fn describe_arity(slots: usize, optional: usize) -> String {
    if optional == 0 {
        slots.to_string()
    } else {
        format!("{}..={}", slots - optional, slots)
    }
}

fn reachable_from_inputs(graph: &Graph) -> HashSet<&str> {
    let consumers: HashMap<&str, Vec<&str>> = graph.consumers();
    let mut seen: HashSet<&str> = graph.inputs.iter().map(|i| i.name.as_str()).collect();
    let mut queue: VecDeque<&str> = seen.iter().copied().collect();
    while let Some(name) = queue.pop_front() {
        for &c in consumers.get(name).into_iter().flatten() {
            if seen.insert(c) {
                queue.push_back(c);
            }
        }
    }
    seen
}
