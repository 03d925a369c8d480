use super::{dispatch, output, typed};
use crate::tensor::{Element, TensorError, TensorValue};

pub fn relu(x: &TensorValue) -> Result<TensorValue, TensorError> {
    dispatch!(x.dtype(), map_impl(x, "relu", relu_scalar))
}

fn relu_scalar<T: Element>(v: T) -> T {
    if v > T::zero() {
        v
    } else {
        T::zero()
    }
}

pub fn tanh(x: &TensorValue) -> Result<TensorValue, TensorError> {
    dispatch!(x.dtype(), map_impl(x, "tanh", |v| v.tanh()))
}

pub fn add(a: &TensorValue, b: &TensorValue) -> Result<TensorValue, TensorError> {
    binary("add", a, b)?;
    dispatch!(a.dtype(), zip_impl(a, b, "add", |x, y| x + y))
}

pub fn mul(a: &TensorValue, b: &TensorValue) -> Result<TensorValue, TensorError> {
    binary("mul", a, b)?;
    dispatch!(a.dtype(), zip_impl(a, b, "mul", |x, y| x * y))
}

/// Softmax along `axis`: each lane is shifted by its maximum, exponentiated,
/// and divided by the sum of exponentials taken in ascending index order.
pub fn softmax(x: &TensorValue, axis: usize) -> Result<TensorValue, TensorError> {
    if axis >= x.dims().len() {
        return Err(TensorError::shape(
            "softmax",
            format!("axis {axis} out of range for {}", x.spec()),
        ));
    }
    dispatch!(x.dtype(), softmax_impl(x, axis))
}

fn binary(op: &'static str, a: &TensorValue, b: &TensorValue) -> Result<(), TensorError> {
    if a.dims() != b.dims() {
        return Err(TensorError::shape(
            op,
            format!("operands differ: {} vs {}", a.spec(), b.spec()),
        ));
    }
    super::same_dtype(op, a, b).map(|_| ())
}

fn map_impl<T: Element>(x: &TensorValue, op: &'static str, f: impl Fn(T) -> T) -> Result<TensorValue, TensorError> {
    let xs = typed::<T>(op, x)?;
    Ok(output(x.dims().to_vec(), xs.iter().map(|&v| f(v)).collect()))
}

fn zip_impl<T: Element>(
    a: &TensorValue,
    b: &TensorValue,
    op: &'static str,
    f: impl Fn(T, T) -> T,
) -> Result<TensorValue, TensorError> {
    let (xs, ys) = (typed::<T>(op, a)?, typed::<T>(op, b)?);
    Ok(output(
        a.dims().to_vec(),
        xs.iter().zip(ys).map(|(&x, &y)| f(x, y)).collect(),
    ))
}

fn softmax_impl<T: Element>(x: &TensorValue, axis: usize) -> Result<TensorValue, TensorError> {
    let xs = typed::<T>("softmax", x)?;
    let dims = x.dims();
    let len = dims[axis];
    let inner: usize = dims[axis + 1..].iter().product();
    let outer: usize = dims[..axis].iter().product();

    let mut out = vec![T::zero(); xs.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * len + k) * inner + i;
            let mut max = T::neg_infinity();
            for k in 0..len {
                if xs[at(k)] > max {
                    max = xs[at(k)];
                }
            }
            let mut sum = T::zero();
            for k in 0..len {
                let e = (xs[at(k)] - max).exp();
                out[at(k)] = e;
                sum = sum + e;
            }
            for k in 0..len {
                out[at(k)] = out[at(k)] / sum;
            }
        }
    }
    Ok(output(dims.to_vec(), out))
}
