use std::fmt;

use serde::{Deserialize, Serialize};

/// Element type of a tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn size_of(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::F64 => "f64",
        }
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for DType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "f32" => Ok(DType::F32),
            "f64" => Ok(DType::F64),
            other => Err(format!("unknown dtype `{other}`")),
        }
    }
}

/// Records which axis carries the per-model packing of a tensor.
///
/// Tensors of an unmerged graph are always `Unlaid`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Layout {
    BatchMajor,
    ChannelMajor,
    #[default]
    Unlaid,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorSpec {
    pub dtype: DType,
    pub dims: Vec<usize>,
    #[serde(default)]
    pub layout: Layout,
}

impl TensorSpec {
    pub fn new(dtype: DType, dims: impl Into<Vec<usize>>) -> Self {
        TensorSpec {
            dtype,
            dims: dims.into(),
            layout: Layout::Unlaid,
        }
    }

    pub fn with_layout(mut self, layout: Layout) -> Self {
        self.layout = layout;
        self
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn numel(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn size_in_bytes(&self) -> usize {
        self.numel() * self.dtype.size_of()
    }

    /// Same element type and extents, ignoring the layout tag.
    pub fn same_shape(&self, other: &TensorSpec) -> bool {
        self.dtype == other.dtype && self.dims == other.dims
    }

    /// Like [`same_shape`](Self::same_shape) but the leading (batch) extent may differ.
    pub fn matches_modulo_batch(&self, other: &TensorSpec) -> bool {
        self.dtype == other.dtype && self.rank() == other.rank() && self.dims.get(1..) == other.dims.get(1..)
    }

    pub fn channel_axis(&self) -> Option<usize> {
        channel_axis(self.rank())
    }
}

impl fmt::Display for TensorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[", self.dtype)?;
        for (i, d) in self.dims.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{d}")?;
        }
        f.write_str("]")
    }
}

/// The axis treated as "channel" for a tensor of the given rank.
///
/// 2-D operands are `(N, D)`, sequences are `(N, S, D)` and images are
/// `(N, C, H, W)`. Other ranks have no channel axis and can only be packed
/// along the batch axis.
pub fn channel_axis(rank: usize) -> Option<usize> {
    match rank {
        2 => Some(1),
        3 => Some(2),
        4 => Some(1),
        _ => None,
    }
}

/// Concatenation dimension assigned to a merged op.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MergeDim {
    Batch,
    Channel,
    DontCare,
}

impl MergeDim {
    pub fn layout(self) -> Layout {
        match self {
            MergeDim::Batch => Layout::BatchMajor,
            MergeDim::Channel => Layout::ChannelMajor,
            MergeDim::DontCare => Layout::Unlaid,
        }
    }
}

impl fmt::Display for MergeDim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            MergeDim::Batch => "Batch",
            MergeDim::Channel => "Channel",
            MergeDim::DontCare => "DontCare",
        };
        f.write_str(s)
    }
}
