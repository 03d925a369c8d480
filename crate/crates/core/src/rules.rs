//! Per-kind merge rules: which counterpart op replaces a kind when `M`
//! models are fused, how its weights are joined, and which packing the
//! counterpart needs.

use serde::Serialize;

use crate::ir::{channel_axis, KindTag, MergeDim, OpKind};
use crate::kernels;
use crate::tensor::TensorValue;

/// How the `M` per-model tensors of one weight slot are joined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum WeightRecipe {
    /// Stacked on a new leading model axis: `(D_in, D_out)` becomes `(M, D_in, D_out)`.
    BatchStack,
    /// Concatenated on the existing leading batch axis: `(b, ...)` becomes `(M·b, ...)`.
    BatchConcat,
    /// Concatenated on the output-channel axis (axis 0 of the weight).
    ChannelConcat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum AttrTransform {
    Identity,
    /// The counterpart gets `M` groups.
    GroupsFromModels,
    /// The group (or batch) count is multiplied by `M`.
    GroupsTimesModels,
    /// Axis attributes shift by one under Batch packing.
    ShiftAxes,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlotRecipe {
    pub slot: &'static str,
    pub recipe: WeightRecipe,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MergeRule {
    pub source: KindTag,
    pub target: KindTag,
    pub weights: Vec<SlotRecipe>,
    pub required: MergeDim,
    pub attrs: AttrTransform,
    /// Packings the op may not run under, in words.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub constraint: Option<&'static str>,
}

pub fn rule_for(kind: KindTag) -> MergeRule {
    use KindTag as K;
    use MergeDim::{Batch, Channel, DontCare};
    use WeightRecipe::{BatchConcat, BatchStack, ChannelConcat};

    let (target, recipe, required, attrs, constraint) = match kind {
        K::MatMul => (
            K::BatchMatMul,
            Some(BatchStack),
            Batch,
            AttrTransform::GroupsFromModels,
            None,
        ),
        K::BatchMatMul => (
            K::BatchMatMul,
            Some(BatchConcat),
            Batch,
            AttrTransform::GroupsTimesModels,
            None,
        ),
        K::Conv2D => (
            K::GroupedConv2D,
            Some(ChannelConcat),
            Channel,
            AttrTransform::GroupsFromModels,
            None,
        ),
        K::GroupedConv2D => (
            K::GroupedConv2D,
            Some(ChannelConcat),
            Channel,
            AttrTransform::GroupsTimesModels,
            None,
        ),
        K::LayerNorm => (
            K::GroupNorm,
            Some(ChannelConcat),
            Channel,
            AttrTransform::GroupsFromModels,
            None,
        ),
        K::GroupNorm => (
            K::GroupNorm,
            Some(ChannelConcat),
            Channel,
            AttrTransform::GroupsTimesModels,
            None,
        ),
        K::BatchNorm => (
            K::BatchNorm,
            Some(ChannelConcat),
            Channel,
            AttrTransform::Identity,
            None,
        ),
        K::ReLU | K::Tanh | K::Add | K::Mul => (kind, None, DontCare, AttrTransform::Identity, None),
        K::MaxPool2D | K::MeanPool2D => (
            kind,
            None,
            DontCare,
            AttrTransform::Identity,
            Some("Channel only when the channel axis is not one of the two pooled axes"),
        ),
        K::Softmax => (
            kind,
            None,
            DontCare,
            AttrTransform::ShiftAxes,
            Some("Channel only when the softmax axis is not the channel axis"),
        ),
        K::Concat => (
            kind,
            None,
            DontCare,
            AttrTransform::ShiftAxes,
            Some("Channel only when the concat axis is not the channel axis"),
        ),
        K::Transpose => (
            kind,
            None,
            DontCare,
            AttrTransform::ShiftAxes,
            Some("Channel only when the permutation fixes the channel axis"),
        ),
        K::Reshape | K::Pack | K::Unpack => (kind, None, DontCare, AttrTransform::ShiftAxes, Some("Batch only")),
    };
    let weights = match recipe {
        Some(recipe) => kind
            .weight_slots()
            .0
            .iter()
            .map(|&slot| SlotRecipe { slot, recipe })
            .collect(),
        None => Vec::new(),
    };
    MergeRule {
        source: kind,
        target,
        weights,
        required,
        attrs,
        constraint,
    }
}

/// The whole table, one rule per IR kind.
pub fn rule_table() -> Vec<MergeRule> {
    KindTag::ALL.into_iter().map(rule_for).collect()
}

pub fn rules_json() -> String {
    let mut text = serde_json::to_string_pretty(&rule_table()).expect("rule table serializes");
    text.push('\n');
    text
}

/// Packings `kind` may run under when its per-model input has rank `rank`.
///
/// Weighted kinds have exactly their required dim. Other kinds can always
/// run Batch-packed; Channel packing needs a channel axis and must not put
/// model boundaries inside a reduction, a join, or a moved axis.
pub fn allowed_dims(kind: &OpKind, rank: usize) -> Vec<MergeDim> {
    let rule = rule_for(kind.tag());
    if rule.required != MergeDim::DontCare {
        return vec![rule.required];
    }
    let channel_ok = match channel_axis(rank) {
        None => false,
        Some(ch) => match kind {
            OpKind::Softmax { axis } | OpKind::Concat { axis } => *axis != ch,
            OpKind::MaxPool2D { .. } | OpKind::MeanPool2D { .. } => ch + 2 < rank,
            OpKind::Transpose { perm } => perm.get(ch) == Some(&ch),
            OpKind::Reshape { .. } | OpKind::Pack { .. } | OpKind::Unpack { .. } => false,
            _ => true,
        },
    };
    if channel_ok {
        vec![MergeDim::Batch, MergeDim::Channel]
    } else {
        vec![MergeDim::Batch]
    }
}

/// The counterpart of `kind` for `m` models running under `dim`.
pub fn merged_kind(kind: &OpKind, m: usize, dim: MergeDim) -> OpKind {
    let batch = dim == MergeDim::Batch;
    let shift = |axis: usize| if batch { axis + 1 } else { axis };
    match kind.clone() {
        OpKind::MatMul => OpKind::BatchMatMul { batch: m },
        OpKind::BatchMatMul { batch: b } => OpKind::BatchMatMul { batch: m * b },
        OpKind::Conv2D {
            kernel,
            stride,
            padding,
        } => OpKind::GroupedConv2D {
            kernel,
            stride,
            padding,
            groups: m,
        },
        OpKind::GroupedConv2D {
            kernel,
            stride,
            padding,
            groups,
        } => OpKind::GroupedConv2D {
            kernel,
            stride,
            padding,
            groups: m * groups,
        },
        OpKind::LayerNorm { eps } => OpKind::GroupNorm { groups: m, eps },
        OpKind::GroupNorm { groups, eps } => OpKind::GroupNorm {
            groups: m * groups,
            eps,
        },
        OpKind::Softmax { axis } => OpKind::Softmax { axis: shift(axis) },
        OpKind::Concat { axis } => OpKind::Concat { axis: shift(axis) },
        OpKind::Pack { axis, stack } => OpKind::Pack {
            axis: shift(axis),
            stack,
        },
        OpKind::Unpack { axis, count, stack } => OpKind::Unpack {
            axis: shift(axis),
            count,
            stack,
        },
        OpKind::Reshape { shape } if batch => OpKind::Reshape {
            shape: std::iter::once(m as i64).chain(shape).collect(),
        },
        OpKind::Transpose { perm } if batch => OpKind::Transpose {
            perm: std::iter::once(0).chain(perm.into_iter().map(|p| p + 1)).collect(),
        },
        other => other,
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("weight `{weight}`: model {first} has {expected} but model {other} has {found}")]
pub struct ArchitectureMismatch {
    pub weight: String,
    pub first: usize,
    pub other: usize,
    pub expected: String,
    pub found: String,
}

/// Joins the per-model tensors of one weight slot, preserving model order.
pub fn merge_weights(
    weight: &str,
    recipe: WeightRecipe,
    per_model: &[&TensorValue],
) -> Result<TensorValue, ArchitectureMismatch> {
    let first = per_model.first().expect("at least one model");
    for (m, t) in per_model.iter().enumerate().skip(1) {
        if !t.spec().same_shape(first.spec()) {
            return Err(ArchitectureMismatch {
                weight: weight.to_owned(),
                first: 0,
                other: m,
                expected: first.spec().to_string(),
                found: t.spec().to_string(),
            });
        }
    }
    let joined = match recipe {
        WeightRecipe::BatchStack => kernels::pack(per_model, 0),
        WeightRecipe::BatchConcat | WeightRecipe::ChannelConcat => kernels::concat(per_model, 0),
    };
    Ok(joined.expect("identical specs always join"))
}
