use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};

use super::{Graph, IrError};

/// Kahn's algorithm over node ids. Ready nodes are released in ascending
/// id order so the result is deterministic.
///
/// Edges to graph inputs (or to unknown names) impose no ordering.
pub fn topological_order(graph: &Graph) -> Result<Vec<&str>, IrError> {
    let index = graph.node_index();
    let n = graph.nodes.len();
    let mut indegree = vec![0usize; n];
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, node) in graph.nodes.iter().enumerate() {
        for edge in &node.inputs {
            if let Some(&p) = index.get(edge.node.as_str()) {
                indegree[i] += 1;
                children[p].push(i);
            }
        }
    }

    let mut ready: BinaryHeap<Reverse<(&str, usize)>> = indegree
        .iter()
        .enumerate()
        .filter(|(_, d)| **d == 0)
        .map(|(i, _)| Reverse((graph.nodes[i].id.as_str(), i)))
        .collect();
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse((id, i))) = ready.pop() {
        order.push(id);
        for &c in &children[i] {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                ready.push(Reverse((graph.nodes[c].id.as_str(), c)));
            }
        }
    }

    if order.len() == n {
        Ok(order)
    } else {
        Err(IrError::Cycle(cycle_member(graph, &index, &indegree)))
    }
}

/// Every node left with a positive in-degree has a parent that is also
/// left over, so walking parents from any of them must revisit a node.
/// Reports the smallest id on the cycle found that way.
fn cycle_member(graph: &Graph, index: &HashMap<&str, usize>, indegree: &[usize]) -> String {
    let start = (0..graph.nodes.len())
        .filter(|&i| indegree[i] > 0)
        .min_by_key(|&i| graph.nodes[i].id.as_str())
        .expect("a cycle leaves at least one node unordered");

    let mut seen: HashMap<usize, usize> = HashMap::new();
    let mut path = Vec::new();
    let mut cur = start;
    loop {
        if let Some(&pos) = seen.get(&cur) {
            return path[pos..]
                .iter()
                .map(|&i: &usize| graph.nodes[i].id.as_str())
                .min()
                .unwrap_or_default()
                .to_string();
        }
        seen.insert(cur, path.len());
        path.push(cur);
        cur = graph.nodes[cur]
            .inputs
            .iter()
            .filter_map(|e| index.get(e.node.as_str()).copied())
            .find(|&p| indegree[p] > 0)
            .expect("leftover node has a leftover parent");
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{DType, EdgeRef, OpKind, OpNode, TensorSpec};

    fn relu(id: &str, inputs: &[&str]) -> OpNode {
        OpNode::new(
            id,
            OpKind::ReLU,
            inputs.iter().map(|s| EdgeRef::of(*s)).collect(),
            TensorSpec::new(DType::F32, [1, 2]),
        )
    }

    fn graph(nodes: Vec<OpNode>) -> Graph {
        let mut g = Graph::new();
        g.add_input("x", TensorSpec::new(DType::F32, [1, 2]));
        g.nodes = nodes;
        g
    }

    #[test]
    fn chain() {
        let g = graph(vec![relu("C", &["B"]), relu("A", &["x"]), relu("B", &["A"])]);
        assert_eq!(topological_order(&g).unwrap(), vec!["A", "B", "C"]);
    }

    #[test]
    fn diamond() {
        let g = graph(vec![
            relu("D", &["C", "B"]),
            relu("C", &["A"]),
            relu("B", &["A"]),
            relu("A", &["x"]),
        ]);
        let order = topological_order(&g).unwrap();
        assert_eq!(order, vec!["A", "B", "C", "D"]);
        let pos = |id: &str| order.iter().position(|o| *o == id).unwrap();
        for node in &g.nodes {
            for e in &node.inputs {
                if e.node != "x" {
                    assert!(pos(&e.node) < pos(&node.id));
                }
            }
        }
    }

    #[test]
    fn singleton() {
        let g = graph(vec![relu("A", &["x"])]);
        assert_eq!(topological_order(&g).unwrap(), vec!["A"]);
    }

    #[test]
    fn cycle_is_named() {
        let g = graph(vec![relu("A", &["B"]), relu("B", &["A"]), relu("Z", &["B"])]);
        match topological_order(&g) {
            Err(IrError::Cycle(id)) => assert_eq!(id, "A"),
            other => panic!("expected cycle error, got {other:?}"),
        }
    }

    #[test]
    fn cycle_found_behind_downstream_node() {
        // "A" is downstream of the B<->C cycle but not on it.
        let g = graph(vec![relu("A", &["C"]), relu("B", &["C", "x"]), relu("C", &["B"])]);
        match topological_order(&g) {
            Err(IrError::Cycle(id)) => assert_eq!(id, "B"),
            other => panic!("expected cycle error, got {other:?}"),
        }
    }
}
