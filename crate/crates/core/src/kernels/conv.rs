use super::{dispatch, output, typed};
use crate::tensor::{Element, TensorError, TensorValue};

/// Zero-padded 2-D cross-correlation.
///
/// `x` is `(N, C_in, H, W)`, `w` is `(C_out, C_in, K, K)` and the optional
/// bias is `(C_out)`. Each output element is accumulated over input channels
/// (outer), kernel rows, then kernel columns (inner), starting from zero;
/// the bias is added last.
pub fn conv2d(
    x: &TensorValue,
    w: &TensorValue,
    bias: Option<&TensorValue>,
    stride: usize,
    padding: usize,
) -> Result<TensorValue, TensorError> {
    if x.dims().len() == 4 && w.dims().len() == 4 && x.dims()[1] != w.dims()[1] {
        return Err(TensorError::shape(
            "conv2d",
            format!("input {} and kernel {} disagree on input channels", x.spec(), w.spec()),
        ));
    }
    grouped_conv2d_op("conv2d", x, w, bias, stride, padding, 1)
}

/// Grouped convolution: output channel `c` reads input channels
/// `g .. g + C_in` with `g = C_in * floor(c / C_out)`, where `C_in` and
/// `C_out` are the per-group extents. Same accumulation order as [`conv2d`].
pub fn grouped_conv2d(
    x: &TensorValue,
    w: &TensorValue,
    bias: Option<&TensorValue>,
    stride: usize,
    padding: usize,
    groups: usize,
) -> Result<TensorValue, TensorError> {
    grouped_conv2d_op("grouped_conv2d", x, w, bias, stride, padding, groups)
}

fn grouped_conv2d_op(
    op: &'static str,
    x: &TensorValue,
    w: &TensorValue,
    bias: Option<&TensorValue>,
    stride: usize,
    padding: usize,
    groups: usize,
) -> Result<TensorValue, TensorError> {
    let (xd, wd) = (x.dims(), w.dims());
    if xd.len() != 4 || wd.len() != 4 {
        return Err(TensorError::shape(
            op,
            format!("expected rank-4 input and kernel, got {} and {}", x.spec(), w.spec()),
        ));
    }
    if stride == 0 {
        return Err(TensorError::shape(op, "stride must be >= 1"));
    }
    if groups == 0 || xd[1] % groups != 0 {
        return Err(TensorError::GroupDivisibility {
            op,
            groups,
            channels: xd[1],
        });
    }
    if wd[0] % groups != 0 {
        return Err(TensorError::GroupDivisibility {
            op,
            groups,
            channels: wd[0],
        });
    }
    if wd[1] * groups != xd[1] {
        return Err(TensorError::shape(
            op,
            format!(
                "input {} does not match kernel {} with {groups} groups",
                x.spec(),
                w.spec()
            ),
        ));
    }
    if xd[2] + 2 * padding < wd[2] || xd[3] + 2 * padding < wd[3] {
        return Err(TensorError::shape(
            op,
            format!("kernel {} larger than padded input {}", w.spec(), x.spec()),
        ));
    }
    if let Some(b) = bias {
        if b.dims() != [wd[0]] {
            return Err(TensorError::shape(
                op,
                format!("bias {} does not match {} output channels", b.spec(), wd[0]),
            ));
        }
        super::same_dtype(op, x, b)?;
    }
    super::same_dtype(op, x, w)?;
    dispatch!(x.dtype(), conv_impl(op, x, w, bias, stride, padding, groups))
}

fn conv_impl<T: Element>(
    op: &'static str,
    x: &TensorValue,
    w: &TensorValue,
    bias: Option<&TensorValue>,
    stride: usize,
    padding: usize,
    groups: usize,
) -> Result<TensorValue, TensorError> {
    let xs = typed::<T>(op, x)?;
    let ws = typed::<T>(op, w)?;
    let bs = bias.map(|b| typed::<T>(op, b)).transpose()?;

    let (n, c_in_total, h, wid) = (x.dims()[0], x.dims()[1], x.dims()[2], x.dims()[3]);
    let (c_out_total, c_in, kh, kw) = (w.dims()[0], w.dims()[1], w.dims()[2], w.dims()[3]);
    let c_out = c_out_total / groups;
    let h_out = (h + 2 * padding - kh) / stride + 1;
    let w_out = (wid + 2 * padding - kw) / stride + 1;

    let mut out = vec![T::zero(); n * c_out_total * h_out * w_out];
    let mut idx = 0;
    for b in 0..n {
        for c in 0..c_out_total {
            let g = c_in * (c / c_out);
            for oh in 0..h_out {
                for ow in 0..w_out {
                    let mut acc = T::zero();
                    for ci in 0..c_in {
                        let x_plane = (b * c_in_total + g + ci) * h * wid;
                        let w_plane = (c * c_in + ci) * kh * kw;
                        for r in 0..kh {
                            let Some(ih) = (oh * stride + r).checked_sub(padding).filter(|&i| i < h) else {
                                continue;
                            };
                            for s in 0..kw {
                                let Some(iw) = (ow * stride + s).checked_sub(padding).filter(|&i| i < wid) else {
                                    continue;
                                };
                                acc = acc + ws[w_plane + r * kw + s] * xs[x_plane + ih * wid + iw];
                            }
                        }
                    }
                    if let Some(bs) = bs {
                        acc = acc + bs[c];
                    }
                    out[idx] = acc;
                    idx += 1;
                }
            }
        }
    }
    debug_assert_eq!(idx, out.len());
    Ok(output(vec![n, c_out_total, h_out, w_out], out))
}
