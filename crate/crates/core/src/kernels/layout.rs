//! Data-movement kernels: reshape, transpose, concat/split and pack/unpack.

use crate::ir::shape::{is_permutation, resolve_reshape};
use crate::tensor::{strides, TensorData, TensorError, TensorValue};

/// Row-major reshape; one extent may be `-1`.
pub fn reshape(x: &TensorValue, shape: &[i64]) -> Result<TensorValue, TensorError> {
    let dims = resolve_reshape(x.spec().numel(), shape).map_err(|m| TensorError::shape("reshape", m))?;
    x.clone().reshaped(dims)
}

/// Output axis `i` is input axis `perm[i]`.
pub fn transpose(x: &TensorValue, perm: &[usize]) -> Result<TensorValue, TensorError> {
    let dims = x.dims();
    if !is_permutation(perm, dims.len()) {
        return Err(TensorError::shape(
            "transpose",
            format!("{perm:?} is not a permutation for {}", x.spec()),
        ));
    }
    let out_dims: Vec<usize> = perm.iter().map(|&p| dims[p]).collect();
    let in_strides = strides(dims);
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let n = x.spec().numel();

    fn gather<T: Copy>(src: &[T], out_dims: &[usize], src_strides: &[usize], n: usize) -> Vec<T> {
        let mut out = Vec::with_capacity(n);
        let mut index = vec![0usize; out_dims.len()];
        let mut offset = 0usize;
        for _ in 0..n {
            out.push(src[offset]);
            for ax in (0..out_dims.len()).rev() {
                index[ax] += 1;
                offset += src_strides[ax];
                if index[ax] < out_dims[ax] {
                    break;
                }
                offset -= src_strides[ax] * out_dims[ax];
                index[ax] = 0;
            }
        }
        out
    }

    let data = match x.data() {
        TensorData::F32(v) => TensorData::F32(gather(v, &out_dims, &src_strides, n)),
        TensorData::F64(v) => TensorData::F64(gather(v, &out_dims, &src_strides, n)),
    };
    TensorValue::new(crate::ir::TensorSpec::new(x.dtype(), out_dims), data)
}

/// Concatenates along an existing axis.
pub fn concat(parts: &[&TensorValue], axis: usize) -> Result<TensorValue, TensorError> {
    let op = "concat";
    let first = *parts.first().ok_or_else(|| TensorError::shape(op, "no operands"))?;
    let dims = first.dims();
    if axis >= dims.len() {
        return Err(TensorError::shape(
            op,
            format!("axis {axis} out of range for {}", first.spec()),
        ));
    }
    for p in parts {
        super::same_dtype(op, first, p)?;
        let compatible = p.dims().len() == dims.len()
            && p.dims()
                .iter()
                .zip(dims)
                .enumerate()
                .all(|(i, (a, b))| i == axis || a == b);
        if !compatible {
            return Err(TensorError::shape(
                op,
                format!("cannot join {} with {} on axis {axis}", p.spec(), first.spec()),
            ));
        }
    }
    let outer: usize = dims[..axis].iter().product();
    let mut out_dims = dims.to_vec();
    out_dims[axis] = parts.iter().map(|p| p.dims()[axis]).sum();

    fn join<T: Copy>(chunks: &[(&[T], usize)], outer: usize) -> Vec<T> {
        let mut out = Vec::with_capacity(chunks.iter().map(|(s, _)| s.len()).sum());
        for o in 0..outer {
            for (src, chunk) in chunks {
                out.extend_from_slice(&src[o * chunk..(o + 1) * chunk]);
            }
        }
        out
    }

    let chunk = |p: &TensorValue| p.dims()[axis..].iter().product::<usize>();
    let data = match first.data() {
        TensorData::F32(_) => {
            let chunks: Vec<(&[f32], usize)> = parts.iter().map(|p| (p.as_slice::<f32>().unwrap(), chunk(p))).collect();
            TensorData::F32(join(&chunks, outer))
        }
        TensorData::F64(_) => {
            let chunks: Vec<(&[f64], usize)> = parts.iter().map(|p| (p.as_slice::<f64>().unwrap(), chunk(p))).collect();
            TensorData::F64(join(&chunks, outer))
        }
    };
    TensorValue::new(crate::ir::TensorSpec::new(first.dtype(), out_dims), data)
}

/// Splits an existing axis into `count` equal consecutive parts.
pub fn split(x: &TensorValue, axis: usize, count: usize) -> Result<Vec<TensorValue>, TensorError> {
    let op = "split";
    let dims = x.dims();
    if axis >= dims.len() || count == 0 || !dims[axis].is_multiple_of(count) {
        return Err(TensorError::shape(
            op,
            format!("cannot split axis {axis} of {} into {count} parts", x.spec()),
        ));
    }
    let outer: usize = dims[..axis].iter().product();
    let mut part_dims = dims.to_vec();
    part_dims[axis] /= count;
    let chunk: usize = part_dims[axis..].iter().product();

    fn cut<T: Copy>(src: &[T], outer: usize, chunk: usize, count: usize) -> Vec<Vec<T>> {
        let mut parts: Vec<Vec<T>> = (0..count).map(|_| Vec::with_capacity(outer * chunk)).collect();
        for o in 0..outer {
            for (m, part) in parts.iter_mut().enumerate() {
                let start = (o * count + m) * chunk;
                part.extend_from_slice(&src[start..start + chunk]);
            }
        }
        parts
    }

    let spec = crate::ir::TensorSpec::new(x.dtype(), part_dims);
    let datas: Vec<TensorData> = match x.data() {
        TensorData::F32(v) => cut(v, outer, chunk, count).into_iter().map(TensorData::F32).collect(),
        TensorData::F64(v) => cut(v, outer, chunk, count).into_iter().map(TensorData::F64).collect(),
    };
    datas.into_iter().map(|d| TensorValue::new(spec.clone(), d)).collect()
}

/// Stacks identically shaped tensors along a new axis.
pub fn pack(parts: &[&TensorValue], axis: usize) -> Result<TensorValue, TensorError> {
    let first = *parts.first().ok_or_else(|| TensorError::shape("pack", "no operands"))?;
    if axis > first.dims().len() {
        return Err(TensorError::shape(
            "pack",
            format!("axis {axis} out of range for {}", first.spec()),
        ));
    }
    if let Some(p) = parts.iter().find(|p| !p.spec().same_shape(first.spec())) {
        return Err(TensorError::shape(
            "pack",
            format!("operands differ: {} vs {}", p.spec(), first.spec()),
        ));
    }
    let expanded: Vec<TensorValue> = parts
        .iter()
        .map(|p| {
            let mut dims = p.dims().to_vec();
            dims.insert(axis, 1);
            (*p).clone().reshaped(dims)
        })
        .collect::<Result<_, _>>()?;
    let refs: Vec<&TensorValue> = expanded.iter().collect();
    concat(&refs, axis)
}

/// Inverse of [`pack`]: `x.dims()[axis]` must equal `count`.
pub fn unpack(x: &TensorValue, count: usize, axis: usize) -> Result<Vec<TensorValue>, TensorError> {
    if axis >= x.dims().len() || x.dims()[axis] != count || x.dims().len() < 2 {
        return Err(TensorError::shape(
            "unpack",
            format!("axis {axis} of {} does not hold {count} entries", x.spec()),
        ));
    }
    split(x, axis, count)?
        .into_iter()
        .map(|t| {
            let mut dims = t.dims().to_vec();
            dims.remove(axis);
            t.reshaped(dims)
        })
        .collect()
}
