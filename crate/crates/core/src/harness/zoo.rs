//! Small stand-in models, one per family.

use std::fmt;
use std::str::FromStr;

use crate::ir::{DType, EdgeRef, Graph, OpKind, OpNode, TensorSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ZooName {
    /// `MatMul -> LayerNorm -> ReLU`.
    Ffnn,
    /// Residual conv block with a grouped conv (G=2) and a max pool.
    CnnBlock,
    /// Attention-style block over `(N, S, D)` sequences.
    AttnBlock,
}

impl ZooName {
    pub const ALL: [ZooName; 3] = [ZooName::Ffnn, ZooName::CnnBlock, ZooName::AttnBlock];

    pub fn as_str(self) -> &'static str {
        match self {
            ZooName::Ffnn => "ffnn",
            ZooName::CnnBlock => "cnnblock",
            ZooName::AttnBlock => "attnblock",
        }
    }
}

impl fmt::Display for ZooName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ZooName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ZooName::ALL
            .into_iter()
            .find(|z| z.as_str() == s)
            .ok_or_else(|| format!("unknown zoo model `{s}` (expected ffnn, cnnblock or attnblock)"))
    }
}

const EPS: f64 = 1e-5;

struct Builder {
    g: Graph,
    dtype: DType,
}

impl Builder {
    fn new(name: ZooName, dtype: DType) -> Self {
        let mut g = Graph::new();
        g.metadata.insert("name".into(), name.as_str().into());
        g.metadata.insert("version".into(), "1".into());
        Builder { g, dtype }
    }

    fn spec(&self, dims: &[usize]) -> TensorSpec {
        TensorSpec::new(self.dtype, dims.to_vec())
    }

    fn node(&mut self, id: &str, kind: OpKind, inputs: &[&EdgeRef], dims: &[usize], weights: &[&str]) -> EdgeRef {
        let node = OpNode::new(id, kind, inputs.iter().map(|e| (*e).clone()).collect(), self.spec(dims))
            .with_weights(weights.iter().map(|w| format!("{id}.{w}")));
        self.g.add_node(node)
    }
}

/// The named model at batch 1; any batch size can be fed at execution time.
pub fn build(name: ZooName, dtype: DType) -> Graph {
    let mut b = Builder::new(name, dtype);
    match name {
        ZooName::Ffnn => {
            let x = b.g.add_input("x", b.spec(&[1, 8]));
            let h = b.node("fc1", OpKind::MatMul, &[&x], &[1, 16], &["weight", "bias"]);
            let h = b.node(
                "ln1",
                OpKind::LayerNorm { eps: EPS },
                &[&h],
                &[1, 16],
                &["gamma", "beta"],
            );
            let y = b.node("relu1", OpKind::ReLU, &[&h], &[1, 16], &[]);
            b.g.add_output(y);
        }
        ZooName::CnnBlock => {
            let img = [1, 8, 8, 8];
            let bn = ["gamma", "beta", "running_mean", "running_var"];
            let x = b.g.add_input("x", b.spec(&[1, 4, 8, 8]));
            let conv = |groups| match groups {
                1 => OpKind::Conv2D {
                    kernel: 3,
                    stride: 1,
                    padding: 1,
                },
                g => OpKind::GroupedConv2D {
                    kernel: 3,
                    stride: 1,
                    padding: 1,
                    groups: g,
                },
            };
            let h = b.node("conv1", conv(1), &[&x], &img, &["kernel", "bias"]);
            let h = b.node("bn1", OpKind::BatchNorm { eps: EPS }, &[&h], &img, &bn);
            let skip = b.node("relu1", OpKind::ReLU, &[&h], &img, &[]);
            let h = b.node("conv2", conv(2), &[&skip], &img, &["kernel", "bias"]);
            let h = b.node("bn2", OpKind::BatchNorm { eps: EPS }, &[&h], &img, &bn);
            let h = b.node("add1", OpKind::Add, &[&h, &skip], &img, &[]);
            let y = b.node(
                "pool1",
                OpKind::MaxPool2D { kernel: 2, stride: 2 },
                &[&h],
                &[1, 8, 4, 4],
                &[],
            );
            b.g.add_output(y);
        }
        ZooName::AttnBlock => {
            let (s, d, f) = (6, 8, 16);
            let x = b.g.add_input("x", b.spec(&[1, s, d]));
            let mm = &["weight", "bias"];
            let ln = &["gamma", "beta"];
            let h = b.node("qkv", OpKind::MatMul, &[&x], &[1, s, d], mm);
            let h = b.node("attn", OpKind::Softmax { axis: 1 }, &[&h], &[1, s, d], &[]);
            let h = b.node("proj", OpKind::MatMul, &[&h], &[1, s, d], mm);
            let skip = b.node("ln1", OpKind::LayerNorm { eps: EPS }, &[&h], &[1, s, d], ln);
            let h = b.node("ff1", OpKind::MatMul, &[&skip], &[1, s, f], mm);
            let h = b.node("relu1", OpKind::ReLU, &[&h], &[1, s, f], &[]);
            let h = b.node("ff2", OpKind::MatMul, &[&h], &[1, s, d], mm);
            let h = b.node("add1", OpKind::Add, &[&h, &skip], &[1, s, d], &[]);
            let y = b.node("ln2", OpKind::LayerNorm { eps: EPS }, &[&h], &[1, s, d], ln);
            b.g.add_output(y);
        }
    }
    b.g
}

/// A one-layer head `MatMul(d_in -> d_out)` over `(N, d_in)` features.
pub fn matmul_head(d_in: usize, d_out: usize, dtype: DType) -> Graph {
    let mut g = Graph::new();
    g.metadata.insert("name".into(), format!("head{d_out}"));
    let x = g.add_input("features", TensorSpec::new(dtype, [1, d_in]));
    let y = g.add_node(
        OpNode::new("fc", OpKind::MatMul, vec![x], TensorSpec::new(dtype, [1, d_out]))
            .with_weights(["fc.weight", "fc.bias"]),
    );
    g.add_output(y);
    g
}
