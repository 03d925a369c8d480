use std::fmt;

/// Operation kinds understood by the IR, with their kind-specific attributes.
///
/// Convolution and pooling windows are square (`kernel` x `kernel`).
/// Axes are given in terms of the tensor the op actually sees.
#[derive(Debug, Clone, PartialEq)]
pub enum OpKind {
    Conv2D {
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    GroupedConv2D {
        kernel: usize,
        stride: usize,
        padding: usize,
        groups: usize,
    },
    MatMul,
    /// `batch` independent weight matrices; row blocks of the input are paired with them in order.
    BatchMatMul {
        batch: usize,
    },
    LayerNorm {
        eps: f64,
    },
    GroupNorm {
        groups: usize,
        eps: f64,
    },
    BatchNorm {
        eps: f64,
    },
    ReLU,
    Tanh,
    Softmax {
        axis: usize,
    },
    MaxPool2D {
        kernel: usize,
        stride: usize,
    },
    MeanPool2D {
        kernel: usize,
        stride: usize,
    },
    Add,
    Mul,
    Concat {
        axis: usize,
    },
    /// Target extents; at most one entry may be `-1` (inferred).
    Reshape {
        shape: Vec<i64>,
    },
    Transpose {
        perm: Vec<usize>,
    },
    /// Joins its inputs into one tensor: stacked along a new `axis` when
    /// `stack` is set, otherwise concatenated along the existing `axis`.
    Pack {
        axis: usize,
        stack: bool,
    },
    /// Inverse of [`OpKind::Pack`]; the only kind with more than one output.
    Unpack {
        axis: usize,
        count: usize,
        stack: bool,
    },
}

/// Attribute-free discriminant of [`OpKind`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum KindTag {
    Conv2D,
    GroupedConv2D,
    MatMul,
    BatchMatMul,
    LayerNorm,
    GroupNorm,
    BatchNorm,
    ReLU,
    Tanh,
    Softmax,
    MaxPool2D,
    MeanPool2D,
    Add,
    Mul,
    Concat,
    Reshape,
    Transpose,
    Pack,
    Unpack,
}

impl KindTag {
    pub const ALL: [KindTag; 19] = [
        KindTag::Conv2D,
        KindTag::GroupedConv2D,
        KindTag::MatMul,
        KindTag::BatchMatMul,
        KindTag::LayerNorm,
        KindTag::GroupNorm,
        KindTag::BatchNorm,
        KindTag::ReLU,
        KindTag::Tanh,
        KindTag::Softmax,
        KindTag::MaxPool2D,
        KindTag::MeanPool2D,
        KindTag::Add,
        KindTag::Mul,
        KindTag::Concat,
        KindTag::Reshape,
        KindTag::Transpose,
        KindTag::Pack,
        KindTag::Unpack,
    ];

    pub fn name(self) -> &'static str {
        match self {
            KindTag::Conv2D => "Conv2D",
            KindTag::GroupedConv2D => "GroupedConv2D",
            KindTag::MatMul => "MatMul",
            KindTag::BatchMatMul => "BatchMatMul",
            KindTag::LayerNorm => "LayerNorm",
            KindTag::GroupNorm => "GroupNorm",
            KindTag::BatchNorm => "BatchNorm",
            KindTag::ReLU => "ReLU",
            KindTag::Tanh => "Tanh",
            KindTag::Softmax => "Softmax",
            KindTag::MaxPool2D => "MaxPool2D",
            KindTag::MeanPool2D => "MeanPool2D",
            KindTag::Add => "Add",
            KindTag::Mul => "Mul",
            KindTag::Concat => "Concat",
            KindTag::Reshape => "Reshape",
            KindTag::Transpose => "Transpose",
            KindTag::Pack => "Pack",
            KindTag::Unpack => "Unpack",
        }
    }

    pub fn from_name(name: &str) -> Option<KindTag> {
        KindTag::ALL.into_iter().find(|k| k.name() == name)
    }

    /// Weight slot names in order; the second element is the number of
    /// trailing slots that may be omitted.
    pub fn weight_slots(self) -> (&'static [&'static str], usize) {
        match self {
            KindTag::Conv2D | KindTag::GroupedConv2D => (&["kernel", "bias"], 1),
            KindTag::MatMul | KindTag::BatchMatMul => (&["weight", "bias"], 1),
            KindTag::LayerNorm | KindTag::GroupNorm => (&["gamma", "beta"], 0),
            KindTag::BatchNorm => (&["gamma", "beta", "running_mean", "running_var"], 0),
            _ => (&[], 0),
        }
    }

    pub fn is_trainable(self) -> bool {
        !self.weight_slots().0.is_empty()
    }
}

impl serde::Serialize for KindTag {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl fmt::Display for KindTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl OpKind {
    pub fn tag(&self) -> KindTag {
        match self {
            OpKind::Conv2D { .. } => KindTag::Conv2D,
            OpKind::GroupedConv2D { .. } => KindTag::GroupedConv2D,
            OpKind::MatMul => KindTag::MatMul,
            OpKind::BatchMatMul { .. } => KindTag::BatchMatMul,
            OpKind::LayerNorm { .. } => KindTag::LayerNorm,
            OpKind::GroupNorm { .. } => KindTag::GroupNorm,
            OpKind::BatchNorm { .. } => KindTag::BatchNorm,
            OpKind::ReLU => KindTag::ReLU,
            OpKind::Tanh => KindTag::Tanh,
            OpKind::Softmax { .. } => KindTag::Softmax,
            OpKind::MaxPool2D { .. } => KindTag::MaxPool2D,
            OpKind::MeanPool2D { .. } => KindTag::MeanPool2D,
            OpKind::Add => KindTag::Add,
            OpKind::Mul => KindTag::Mul,
            OpKind::Concat { .. } => KindTag::Concat,
            OpKind::Reshape { .. } => KindTag::Reshape,
            OpKind::Transpose { .. } => KindTag::Transpose,
            OpKind::Pack { .. } => KindTag::Pack,
            OpKind::Unpack { .. } => KindTag::Unpack,
        }
    }

    pub fn name(&self) -> &'static str {
        self.tag().name()
    }

    pub fn num_outputs(&self) -> usize {
        match self {
            OpKind::Unpack { count, .. } => *count,
            _ => 1,
        }
    }

    /// Group count for group-bearing kinds.
    pub fn groups(&self) -> Option<usize> {
        match self {
            OpKind::GroupedConv2D { groups, .. } | OpKind::GroupNorm { groups, .. } => Some(*groups),
            OpKind::BatchMatMul { batch } => Some(*batch),
            OpKind::Conv2D { .. } | OpKind::LayerNorm { .. } | OpKind::MatMul => Some(1),
            _ => None,
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OpKind::Conv2D {
                kernel,
                stride,
                padding,
            } => {
                write!(f, "Conv2D(k={kernel}, s={stride}, p={padding})")
            }
            OpKind::GroupedConv2D {
                kernel,
                stride,
                padding,
                groups,
            } => {
                write!(f, "GroupedConv2D(k={kernel}, s={stride}, p={padding}, G={groups})")
            }
            OpKind::BatchMatMul { batch } => write!(f, "BatchMatMul(b={batch})"),
            OpKind::GroupNorm { groups, .. } => write!(f, "GroupNorm(G={groups})"),
            OpKind::Softmax { axis } => write!(f, "Softmax(axis={axis})"),
            OpKind::MaxPool2D { kernel, stride } => write!(f, "MaxPool2D(k={kernel}, s={stride})"),
            OpKind::MeanPool2D { kernel, stride } => write!(f, "MeanPool2D(k={kernel}, s={stride})"),
            OpKind::Concat { axis } => write!(f, "Concat(axis={axis})"),
            OpKind::Reshape { shape } => write!(f, "Reshape({shape:?})"),
            OpKind::Transpose { perm } => write!(f, "Transpose({perm:?})"),
            OpKind::Pack { axis, stack } => {
                write!(f, "Pack({} axis={axis})", if *stack { "stack" } else { "concat" })
            }
            OpKind::Unpack { axis, count, stack } => write!(
                f,
                "Unpack({} axis={axis}, n={count})",
                if *stack { "stack" } else { "split" }
            ),
            other => f.write_str(other.name()),
        }
    }
}
