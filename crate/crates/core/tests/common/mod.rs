#![allow(dead_code)]

use netmerge::harness::init;
use netmerge::ir::shape::expected_output;
use netmerge::{DType, EdgeRef, Graph, OpKind, OpNode, TensorSpec, WeightStore};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Seeded weight stores for `m` models of `graph`.
pub fn stores(graph: &Graph, m: usize, seed: u64) -> Vec<WeightStore> {
    (0..m).map(|i| init::weights(graph, seed, i).unwrap()).collect()
}

fn divisors(n: usize) -> Vec<usize> {
    (1..=n).filter(|d| n.is_multiple_of(*d)).collect()
}

struct Gen {
    rng: ChaCha8Rng,
    g: Graph,
    edges: Vec<(EdgeRef, TensorSpec)>,
    dtype: DType,
    next: usize,
}

impl Gen {
    /// Adds a node whose weight-determined extents are `free`, in order.
    fn push(&mut self, kind: OpKind, inputs: Vec<usize>, free: &[usize], weights: &[&str]) {
        let specs: Vec<&TensorSpec> = inputs.iter().map(|&i| &self.edges[i].1).collect();
        let dims = expected_output(&kind, &specs).expect("generator builds valid nodes");
        let mut free = free.iter();
        let dims: Vec<usize> = dims
            .into_iter()
            .map(|d| d.unwrap_or_else(|| *free.next().expect("free extent supplied")))
            .collect();
        let id = format!("n{}", self.next);
        self.next += 1;
        let spec = TensorSpec::new(self.dtype, dims);
        let node = OpNode::new(
            &id,
            kind,
            inputs.iter().map(|&i| self.edges[i].0.clone()).collect(),
            spec.clone(),
        )
        .with_weights(weights.iter().map(|w| format!("{id}.{w}")));
        let edge = self.g.add_node(node);
        self.edges.push((edge, spec));
    }

    /// An existing edge with exactly `dims`, other than `not` when possible.
    fn partner(&mut self, i: usize, same_except: Option<usize>) -> usize {
        let dims = self.edges[i].1.dims.clone();
        let fits = |s: &TensorSpec| {
            s.rank() == dims.len()
                && s.dims
                    .iter()
                    .zip(&dims)
                    .enumerate()
                    .all(|(k, (a, b))| Some(k) == same_except || a == b)
        };
        let options: Vec<usize> = (0..self.edges.len())
            .filter(|&k| k != i && fits(&self.edges[k].1))
            .collect();
        options.choose(&mut self.rng).copied().unwrap_or(i)
    }

    fn step(&mut self) {
        let i = self.rng.random_range(0..self.edges.len());
        let dims = self.edges[i].1.dims.clone();
        let rank = dims.len();
        let c = dims[if rank == 4 { 1 } else { rank - 1 }];
        let mm: &[&str] = if self.rng.random_bool(0.5) {
            &["weight", "bias"]
        } else {
            &["weight"]
        };
        let norm2: &[&str] = &["gamma", "beta"];
        let eps = 1e-5;
        let choice = self.rng.random_range(0..12);
        match (rank, choice) {
            (4, 0) => {
                let k = *[1usize, 3].choose(&mut self.rng).unwrap();
                let c_out = self.rng.random_range(1..=6);
                let stride = self.rng.random_range(1..=2);
                let kind = OpKind::Conv2D {
                    kernel: k,
                    stride,
                    padding: k / 2,
                };
                self.push(kind, vec![i], &[c_out, 0, 0], &["kernel", "bias"]);
            }
            (4, 1) => {
                let groups = *divisors(c).choose(&mut self.rng).unwrap();
                let c_out = groups * self.rng.random_range(1..=2);
                let kind = OpKind::GroupedConv2D {
                    kernel: 3,
                    stride: 1,
                    padding: 1,
                    groups,
                };
                self.push(kind, vec![i], &[c_out], &["kernel", "bias"]);
            }
            (4, 2) => self.push(
                OpKind::BatchNorm { eps },
                vec![i],
                &[],
                &["gamma", "beta", "running_mean", "running_var"],
            ),
            (4, 3) if dims[2].is_multiple_of(2) && dims[3].is_multiple_of(2) => {
                let kind = if self.rng.random_bool(0.5) {
                    OpKind::MaxPool2D { kernel: 2, stride: 2 }
                } else {
                    OpKind::MeanPool2D { kernel: 2, stride: 2 }
                };
                self.push(kind, vec![i], &[], &[]);
            }
            (4, 4) => {
                let perm = if self.rng.random_bool(0.5) {
                    vec![0, 1, 3, 2]
                } else {
                    vec![0, 2, 1, 3]
                };
                self.push(OpKind::Transpose { perm }, vec![i], &[], &[]);
            }
            (4, 5) => {
                let j = self.partner(i, Some(1));
                self.push(OpKind::Concat { axis: 1 }, vec![i, j], &[], &[]);
            }
            (3, 0..=1) | (2, 0..=1) | (4, 6) => {
                let d_out = self.rng.random_range(1..=8);
                self.push(OpKind::MatMul, vec![i], &[d_out], mm);
            }
            (3, 2) => self.push(OpKind::Transpose { perm: vec![0, 2, 1] }, vec![i], &[], &[]),
            (3, 3) | (2, 3) => {
                let axis = self.rng.random_range(1..rank);
                self.push(OpKind::Softmax { axis }, vec![i], &[], &[]);
            }
            (3, 4) | (2, 4) => {
                let axis = self.rng.random_range(1..rank);
                let j = self.partner(i, Some(axis));
                self.push(OpKind::Concat { axis }, vec![i, j], &[], &[]);
            }
            (3, 5) | (4, 7) => {
                let inner: usize = dims[1..].iter().product();
                self.push(
                    OpKind::Reshape {
                        shape: vec![-1, inner as i64],
                    },
                    vec![i],
                    &[],
                    &[],
                );
            }
            (_, 7) | (_, 8) => {
                let groups = *divisors(c).choose(&mut self.rng).unwrap();
                let kind = if groups == 1 {
                    OpKind::LayerNorm { eps }
                } else {
                    OpKind::GroupNorm { groups, eps }
                };
                self.push(kind, vec![i], &[], norm2);
            }
            (_, 9) => {
                let j = self.partner(i, None);
                let kind = if self.rng.random_bool(0.5) {
                    OpKind::Add
                } else {
                    OpKind::Mul
                };
                self.push(kind, vec![i, j], &[], &[]);
            }
            (_, 10) => self.push(OpKind::Tanh, vec![i], &[], &[]),
            _ => self.push(OpKind::ReLU, vec![i], &[], &[]),
        }
    }
}

/// A random valid graph of `1..=max_nodes` nodes over one or two inputs of
/// rank 2, 3 or 4, with batch extent 1.
pub fn random_graph(seed: u64, max_nodes: usize, dtype: DType) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = Graph::new();
    g.metadata.insert("name".into(), format!("random{seed}"));
    let mut edges = Vec::new();
    for k in 0..rng.random_range(1..=2) {
        let dims = match rng.random_range(2..=4) {
            2 => vec![1, rng.random_range(1..=6)],
            3 => vec![1, rng.random_range(1..=4), rng.random_range(1..=6)],
            _ => vec![
                1,
                rng.random_range(1..=4),
                2 * rng.random_range(1..=3),
                2 * rng.random_range(1..=3),
            ],
        };
        let spec = TensorSpec::new(dtype, dims);
        edges.push((g.add_input(format!("in{k}"), spec.clone()), spec));
    }
    let n = rng.random_range(1..=max_nodes);
    let mut gen = Gen {
        rng,
        g,
        edges,
        dtype,
        next: 0,
    };
    for _ in 0..n {
        gen.step();
    }
    let last = gen.edges.len() - 1;
    let mut outputs = vec![gen.edges[last].0.clone()];
    if gen.rng.random_bool(0.3) {
        let extra = gen.rng.random_range(0..last);
        if !gen.edges[extra].0.node.starts_with("in") {
            outputs.push(gen.edges[extra].0.clone());
        }
    }
    for o in outputs {
        gen.g.add_output(o);
    }
    // Inputs nobody reads are dropped so the graph validates.
    let used: Vec<String> = gen
        .g
        .nodes
        .iter()
        .flat_map(|n| n.inputs.iter().map(|e| e.node.clone()))
        .collect();
    gen.g.inputs.retain(|i| used.contains(&i.name));
    gen.g
}
