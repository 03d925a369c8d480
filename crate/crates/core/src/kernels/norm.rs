use super::{dispatch, output, typed};
use crate::ir::channel_axis;
use crate::tensor::{Element, TensorError, TensorValue};

/// Layer normalization over the channel axis (and, for images, the spatial
/// axes) of every sample, with per-channel affine parameters.
///
/// Computed as group normalization with a single group.
pub fn layer_norm(
    x: &TensorValue,
    gamma: &TensorValue,
    beta: &TensorValue,
    eps: f64,
) -> Result<TensorValue, TensorError> {
    norm_op("layer_norm", x, gamma, beta, 1, eps)
}

/// Group normalization. Channels are split into `groups` consecutive
/// groups; each sample (each `(n, s)` position for sequences) gets its own
/// statistics per group.
///
/// Statistics are summed channel-major (channel outer, spatial inner) from
/// zero: the mean divides by the group size, the variance is the population
/// variance of the same elements in the same order, and `eps` is added
/// inside the square root. Output is `(x - mean) / sqrt(var + eps) * gamma + beta`.
pub fn group_norm(
    x: &TensorValue,
    gamma: &TensorValue,
    beta: &TensorValue,
    groups: usize,
    eps: f64,
) -> Result<TensorValue, TensorError> {
    norm_op("group_norm", x, gamma, beta, groups, eps)
}

/// Inference-mode batch normalization with running statistics as weights:
/// `(x - mean[c]) / sqrt(var[c] + eps) * gamma[c] + beta[c]`.
pub fn batch_norm_inference(
    x: &TensorValue,
    gamma: &TensorValue,
    beta: &TensorValue,
    running_mean: &TensorValue,
    running_var: &TensorValue,
    eps: f64,
) -> Result<TensorValue, TensorError> {
    let op = "batch_norm";
    let (_, c, _) = channel_split(op, x)?;
    for p in [gamma, beta, running_mean, running_var] {
        check_param(op, x, p, c)?;
    }
    if running_var.to_f64_vec().iter().any(|v| *v < 0.0) {
        return Err(TensorError::Domain {
            op,
            message: "running variance has negative entries".into(),
        });
    }
    dispatch!(
        x.dtype(),
        batch_norm_impl(x, gamma, beta, running_mean, running_var, eps)
    )
}

/// `(outer, channels, inner)` around the channel axis of `x`.
fn channel_split(op: &'static str, x: &TensorValue) -> Result<(usize, usize, usize), TensorError> {
    let dims = x.dims();
    let axis = channel_axis(dims.len())
        .ok_or_else(|| TensorError::shape(op, format!("expected rank 2..=4, got {}", x.spec())))?;
    let outer = dims[..axis].iter().product();
    let inner = dims[axis + 1..].iter().product();
    Ok((outer, dims[axis], inner))
}

fn check_param(op: &'static str, x: &TensorValue, p: &TensorValue, c: usize) -> Result<(), TensorError> {
    if p.dims() != [c] {
        return Err(TensorError::shape(
            op,
            format!("parameter {} does not match {c} channels of {}", p.spec(), x.spec()),
        ));
    }
    super::same_dtype(op, x, p).map(|_| ())
}

fn norm_op(
    op: &'static str,
    x: &TensorValue,
    gamma: &TensorValue,
    beta: &TensorValue,
    groups: usize,
    eps: f64,
) -> Result<TensorValue, TensorError> {
    let (outer, c, inner) = channel_split(op, x)?;
    if groups == 0 || c % groups != 0 {
        return Err(TensorError::GroupDivisibility {
            op,
            groups,
            channels: c,
        });
    }
    check_param(op, x, gamma, c)?;
    check_param(op, x, beta, c)?;
    dispatch!(x.dtype(), norm_impl(op, x, gamma, beta, (outer, c, inner), groups, eps))
}

fn norm_impl<T: Element>(
    op: &'static str,
    x: &TensorValue,
    gamma: &TensorValue,
    beta: &TensorValue,
    (outer, c, inner): (usize, usize, usize),
    groups: usize,
    eps: f64,
) -> Result<TensorValue, TensorError> {
    let xs = typed::<T>(op, x)?;
    let gs = typed::<T>(op, gamma)?;
    let bs = typed::<T>(op, beta)?;
    let eps = T::from_f64(eps);
    let per_group = c / groups;
    let count = T::from_f64((per_group * inner) as f64);

    let mut out = vec![T::zero(); xs.len()];
    for o in 0..outer {
        for g in 0..groups {
            let channels = g * per_group..(g + 1) * per_group;
            let base = |ch: usize| (o * c + ch) * inner;

            let mut sum = T::zero();
            for ch in channels.clone() {
                for &v in &xs[base(ch)..base(ch) + inner] {
                    sum = sum + v;
                }
            }
            let mean = sum / count;

            let mut sq = T::zero();
            for ch in channels.clone() {
                for &v in &xs[base(ch)..base(ch) + inner] {
                    let d = v - mean;
                    sq = sq + d * d;
                }
            }
            let denom = (sq / count + eps).sqrt();

            for ch in channels {
                let b = base(ch);
                for i in b..b + inner {
                    out[i] = (xs[i] - mean) / denom * gs[ch] + bs[ch];
                }
            }
        }
    }
    Ok(output(x.dims().to_vec(), out))
}

fn batch_norm_impl<T: Element>(
    x: &TensorValue,
    gamma: &TensorValue,
    beta: &TensorValue,
    mean: &TensorValue,
    var: &TensorValue,
    eps: f64,
) -> Result<TensorValue, TensorError> {
    let op = "batch_norm";
    let (outer, c, inner) = channel_split(op, x)?;
    let xs = typed::<T>(op, x)?;
    let (gs, bs) = (typed::<T>(op, gamma)?, typed::<T>(op, beta)?);
    let (ms, vs) = (typed::<T>(op, mean)?, typed::<T>(op, var)?);
    let eps = T::from_f64(eps);

    let mut out = vec![T::zero(); xs.len()];
    for o in 0..outer {
        for ch in 0..c {
            let denom = (vs[ch] + eps).sqrt();
            let b = (o * c + ch) * inner;
            for i in b..b + inner {
                out[i] = (xs[i] - ms[ch]) / denom * gs[ch] + bs[ch];
            }
        }
    }
    Ok(output(x.dims().to_vec(), out))
}
