//! Reference CPU kernels.
//!
//! Every kernel accumulates in the tensor's own dtype with a fixed,
//! documented summation order and no fused multiply-add. Two calls that
//! see the same operand values in the same order therefore produce the
//! same bits, which is what makes merged and per-model execution
//! comparable without a tolerance.

mod conv;
mod elementwise;
mod layout;
mod matmul;
mod norm;
mod pool;

pub use conv::{conv2d, grouped_conv2d};
pub use elementwise::{add, mul, relu, softmax, tanh};
pub use layout::{concat, pack, reshape, split, transpose, unpack};
pub use matmul::{batch_matmul, matmul};
pub use norm::{batch_norm_inference, group_norm, layer_norm};
pub use pool::{max_pool2d, mean_pool2d};

use crate::ir::DType;
use crate::tensor::{Element, TensorError, TensorValue};

/// Calls a generic `*_impl::<T>` function for the dtype of the first operand.
macro_rules! dispatch {
    ($dtype:expr, $f:ident ( $($arg:expr),* $(,)? )) => {
        match $dtype {
            $crate::ir::DType::F32 => $f::<f32>($($arg),*),
            $crate::ir::DType::F64 => $f::<f64>($($arg),*),
        }
    };
}
pub(crate) use dispatch;

pub(crate) fn typed<'a, T: Element>(op: &'static str, t: &'a TensorValue) -> Result<&'a [T], TensorError> {
    t.as_slice::<T>().ok_or(TensorError::DType {
        op,
        expected: T::DTYPE,
        found: t.dtype(),
    })
}

pub(crate) fn output<T: Element>(dims: Vec<usize>, values: Vec<T>) -> TensorValue {
    TensorValue::from_vec(dims, values).expect("kernel produced a consistent buffer")
}

pub(crate) fn same_dtype(op: &'static str, a: &TensorValue, b: &TensorValue) -> Result<DType, TensorError> {
    if a.dtype() != b.dtype() {
        return Err(TensorError::DType {
            op,
            expected: a.dtype(),
            found: b.dtype(),
        });
    }
    Ok(a.dtype())
}
