use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use super::op::OpKind;
use super::spec::TensorSpec;

/// Reference to one output of a node, or to a graph input (index 0).
///
/// Written as `"nodeId:outputIndex"`; the split happens at the last `:`,
/// so ids may themselves contain `::`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EdgeRef {
    pub node: String,
    pub output: usize,
}

impl EdgeRef {
    pub fn new(node: impl Into<String>, output: usize) -> Self {
        EdgeRef {
            node: node.into(),
            output,
        }
    }

    pub fn of(node: impl Into<String>) -> Self {
        EdgeRef::new(node, 0)
    }
}

impl fmt::Display for EdgeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.node, self.output)
    }
}

impl FromStr for EdgeRef {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (node, idx) = s
            .rsplit_once(':')
            .ok_or_else(|| format!("edge reference `{s}` is not of the form `node:index`"))?;
        if node.is_empty() {
            return Err(format!("edge reference `{s}` has an empty node id"));
        }
        let output = idx
            .parse()
            .map_err(|_| format!("edge reference `{s}` has a non-numeric output index"))?;
        Ok(EdgeRef::new(node, output))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpNode {
    pub id: String,
    pub kind: OpKind,
    pub inputs: Vec<EdgeRef>,
    pub weights: Vec<String>,
    /// Spec of each output; `Unpack` nodes have `count` outputs of this spec.
    pub output: TensorSpec,
}

impl OpNode {
    pub fn new(id: impl Into<String>, kind: OpKind, inputs: Vec<EdgeRef>, output: TensorSpec) -> Self {
        OpNode {
            id: id.into(),
            kind,
            inputs,
            weights: Vec::new(),
            output,
        }
    }

    pub fn with_weights<I, S>(mut self, weights: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.weights = weights.into_iter().map(Into::into).collect();
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphInput {
    pub name: String,
    pub spec: TensorSpec,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Graph {
    pub nodes: Vec<OpNode>,
    pub inputs: Vec<GraphInput>,
    pub outputs: Vec<EdgeRef>,
    pub metadata: BTreeMap<String, String>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn add_input(&mut self, name: impl Into<String>, spec: TensorSpec) -> EdgeRef {
        let name = name.into();
        self.inputs.push(GraphInput {
            name: name.clone(),
            spec,
        });
        EdgeRef::of(name)
    }

    pub fn add_node(&mut self, node: OpNode) -> EdgeRef {
        let edge = EdgeRef::of(node.id.clone());
        self.nodes.push(node);
        edge
    }

    pub fn add_output(&mut self, edge: EdgeRef) {
        self.outputs.push(edge);
    }

    pub fn node(&self, id: &str) -> Option<&OpNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn input(&self, name: &str) -> Option<&GraphInput> {
        self.inputs.iter().find(|i| i.name == name)
    }

    pub fn node_index(&self) -> HashMap<&str, usize> {
        self.nodes.iter().enumerate().map(|(i, n)| (n.id.as_str(), i)).collect()
    }

    /// Spec of the tensor an edge carries, if the edge resolves.
    pub fn edge_spec(&self, edge: &EdgeRef) -> Option<&TensorSpec> {
        if let Some(node) = self.node(&edge.node) {
            (edge.output < node.kind.num_outputs()).then_some(&node.output)
        } else {
            self.input(&edge.node).filter(|_| edge.output == 0).map(|i| &i.spec)
        }
    }

    pub fn num_edges(&self) -> usize {
        self.nodes.iter().map(|n| n.inputs.len()).sum()
    }

    /// Node ids consuming each node or input name, in node order.
    pub fn consumers(&self) -> HashMap<&str, Vec<&str>> {
        let mut map: HashMap<&str, Vec<&str>> = HashMap::new();
        for node in &self.nodes {
            for edge in &node.inputs {
                map.entry(edge.node.as_str()).or_default().push(node.id.as_str());
            }
        }
        map
    }

    pub fn is_merged(&self) -> bool {
        self.metadata.contains_key(crate::merger::MERGE_METADATA_KEY)
    }
}
