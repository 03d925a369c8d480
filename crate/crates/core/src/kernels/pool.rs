use super::{dispatch, output, typed};
use crate::tensor::{Element, TensorError, TensorValue};

/// Max pooling over the last two axes. Windows may not overhang.
pub fn max_pool2d(x: &TensorValue, kernel: usize, stride: usize) -> Result<TensorValue, TensorError> {
    check("max_pool2d", x, kernel, stride)?;
    dispatch!(x.dtype(), pool_impl(x, kernel, stride, false))
}

/// Mean pooling over the last two axes; window rows outer, columns inner.
pub fn mean_pool2d(x: &TensorValue, kernel: usize, stride: usize) -> Result<TensorValue, TensorError> {
    check("mean_pool2d", x, kernel, stride)?;
    dispatch!(x.dtype(), pool_impl(x, kernel, stride, true))
}

fn check(op: &'static str, x: &TensorValue, kernel: usize, stride: usize) -> Result<(), TensorError> {
    let dims = x.dims();
    if dims.len() < 3 {
        return Err(TensorError::shape(op, format!("expected rank >= 3, got {}", x.spec())));
    }
    if kernel == 0 || stride == 0 {
        return Err(TensorError::shape(op, "kernel and stride must be >= 1"));
    }
    for &extent in &dims[dims.len() - 2..] {
        if kernel > extent || !(extent - kernel).is_multiple_of(stride) {
            return Err(TensorError::shape(
                op,
                format!("window {kernel} with stride {stride} overhangs {}", x.spec()),
            ));
        }
    }
    Ok(())
}

fn pool_impl<T: Element>(
    x: &TensorValue,
    kernel: usize,
    stride: usize,
    mean: bool,
) -> Result<TensorValue, TensorError> {
    let xs = typed::<T>("pool2d", x)?;
    let dims = x.dims();
    let r = dims.len();
    let (h, w) = (dims[r - 2], dims[r - 1]);
    let (h_out, w_out) = ((h - kernel) / stride + 1, (w - kernel) / stride + 1);
    let planes: usize = dims[..r - 2].iter().product();
    let area = T::from_f64((kernel * kernel) as f64);

    let mut out = Vec::with_capacity(planes * h_out * w_out);
    for p in 0..planes {
        let plane = &xs[p * h * w..(p + 1) * h * w];
        for oh in 0..h_out {
            for ow in 0..w_out {
                let mut acc = if mean { T::zero() } else { T::neg_infinity() };
                for i in 0..kernel {
                    for j in 0..kernel {
                        let v = plane[(oh * stride + i) * w + ow * stride + j];
                        if mean {
                            acc = acc + v;
                        } else if v > acc {
                            acc = v;
                        }
                    }
                }
                out.push(if mean { acc / area } else { acc });
            }
        }
    }
    let mut out_dims = dims.to_vec();
    out_dims[r - 2] = h_out;
    out_dims[r - 1] = w_out;
    Ok(output(out_dims, out))
}
