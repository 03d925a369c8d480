use super::{dispatch, output, typed};
use crate::tensor::{Element, TensorError, TensorValue};

/// `x (..., D_in) · w (D_in, D_out) [+ bias (D_out)]`.
///
/// All leading axes of `x` are treated as rows. Each output element sums
/// over `D_in` in ascending order starting from zero, then adds the bias.
pub fn matmul(x: &TensorValue, w: &TensorValue, bias: Option<&TensorValue>) -> Result<TensorValue, TensorError> {
    let op = "matmul";
    if x.dims().len() < 2 || w.dims().len() != 2 {
        return Err(TensorError::shape(
            op,
            format!(
                "expected x of rank >= 2 and 2-D weight, got {} and {}",
                x.spec(),
                w.spec()
            ),
        ));
    }
    let (d_in, d_out) = (w.dims()[0], w.dims()[1]);
    check_inner(op, x, w, d_in)?;
    check_bias(op, x, bias, &[d_out])?;
    super::same_dtype(op, x, w)?;
    dispatch!(x.dtype(), matmul_impl(op, x, w, bias, 1))
}

/// Batched form: `w` is `(G, D_in, D_out)` and the rows of `x` are split
/// into `G` consecutive blocks, block `g` multiplying only `w[g]`.
///
/// The leading axes of `x` must have a prefix whose product is `G`, so a
/// block is `x[g]` for `x (G, N, D_in)` or `x[m, b]` for `x (M, b, N, D_in)`
/// with `G = M·b`. Per-block accumulation is identical to [`matmul`].
pub fn batch_matmul(x: &TensorValue, w: &TensorValue, bias: Option<&TensorValue>) -> Result<TensorValue, TensorError> {
    let op = "batch_matmul";
    if x.dims().len() < 3 || w.dims().len() != 3 {
        return Err(TensorError::shape(
            op,
            format!(
                "expected x of rank >= 3 and 3-D weight, got {} and {}",
                x.spec(),
                w.spec()
            ),
        ));
    }
    let (g, d_in, d_out) = (w.dims()[0], w.dims()[1], w.dims()[2]);
    let lead = &x.dims()[..x.dims().len() - 1];
    let aligned = lead
        .iter()
        .scan(1usize, |acc, &d| {
            *acc *= d;
            Some(*acc)
        })
        .any(|p| p == g);
    if !aligned {
        return Err(TensorError::shape(
            op,
            format!("leading axes of {} cannot be split into {g} blocks", x.spec()),
        ));
    }
    check_inner(op, x, w, d_in)?;
    check_bias(op, x, bias, &[g, d_out])?;
    super::same_dtype(op, x, w)?;
    dispatch!(x.dtype(), matmul_impl(op, x, w, bias, g))
}

fn check_inner(op: &'static str, x: &TensorValue, w: &TensorValue, d_in: usize) -> Result<(), TensorError> {
    if *x.dims().last().expect("rank checked") != d_in {
        return Err(TensorError::shape(
            op,
            format!("inner extents differ: {} vs {}", x.spec(), w.spec()),
        ));
    }
    Ok(())
}

fn check_bias(
    op: &'static str,
    x: &TensorValue,
    bias: Option<&TensorValue>,
    dims: &[usize],
) -> Result<(), TensorError> {
    if let Some(b) = bias {
        if b.dims() != dims {
            return Err(TensorError::shape(
                op,
                format!("bias {} should have extents {dims:?}", b.spec()),
            ));
        }
        super::same_dtype(op, x, b)?;
    }
    Ok(())
}

fn matmul_impl<T: Element>(
    op: &'static str,
    x: &TensorValue,
    w: &TensorValue,
    bias: Option<&TensorValue>,
    blocks: usize,
) -> Result<TensorValue, TensorError> {
    let xs = typed::<T>(op, x)?;
    let ws = typed::<T>(op, w)?;
    let bs = bias.map(|b| typed::<T>(op, b)).transpose()?;
    let wd = w.dims();
    let (d_in, d_out) = (wd[wd.len() - 2], wd[wd.len() - 1]);
    let rows = x.spec().numel() / d_in / blocks;

    let mut out = vec![T::zero(); blocks * rows * d_out];
    for g in 0..blocks {
        let wg = &ws[g * d_in * d_out..(g + 1) * d_in * d_out];
        let bg = bs.map(|b| &b[g * d_out..(g + 1) * d_out]);
        for r in 0..rows {
            let xr = &xs[(g * rows + r) * d_in..(g * rows + r + 1) * d_in];
            let yr = &mut out[(g * rows + r) * d_out..(g * rows + r + 1) * d_out];
            for (j, y) in yr.iter_mut().enumerate() {
                let mut acc = T::zero();
                for (k, &xv) in xr.iter().enumerate() {
                    acc = acc + xv * wg[k * d_out + j];
                }
                if let Some(bg) = bg {
                    acc = acc + bg[j];
                }
                *y = acc;
            }
        }
    }
    let mut dims = x.dims().to_vec();
    *dims.last_mut().expect("rank checked") = d_out;
    Ok(output(dims, out))
}
