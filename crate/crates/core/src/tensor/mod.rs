//! Dense tensors with an explicit spec, plus the on-disk blob codec.

pub mod blob;

use std::fmt;

use num_traits::Float;
use thiserror::Error;

use crate::ir::{DType, TensorSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape error: {message}")]
    Shape { op: &'static str, message: String },
    #[error("{op}: {groups} groups do not divide {channels} channels")]
    GroupDivisibility {
        op: &'static str,
        groups: usize,
        channels: usize,
    },
    #[error("{op}: domain error: {message}")]
    Domain { op: &'static str, message: String },
    #[error("{op}: expected {expected} operands, found {found}")]
    DType {
        op: &'static str,
        expected: DType,
        found: DType,
    },
    #[error("data length {len} does not match {spec}")]
    Length { len: usize, spec: String },
}

impl TensorError {
    pub(crate) fn shape(op: &'static str, message: impl Into<String>) -> Self {
        TensorError::Shape {
            op,
            message: message.into(),
        }
    }
}

/// Floating-point element types the engine computes in.
pub trait Element: Float + Send + Sync + fmt::Debug + 'static {
    const DTYPE: DType;

    fn slice(data: &TensorData) -> Option<&[Self]>;
    fn wrap(values: Vec<Self>) -> TensorData;
    fn from_f64(value: f64) -> Self;
    fn to_bits_u64(self) -> u64;
    fn to_f64(self) -> f64;
}

impl Element for f32 {
    const DTYPE: DType = DType::F32;

    fn slice(data: &TensorData) -> Option<&[f32]> {
        match data {
            TensorData::F32(v) => Some(v),
            TensorData::F64(_) => None,
        }
    }

    fn wrap(values: Vec<f32>) -> TensorData {
        TensorData::F32(values)
    }

    fn from_f64(value: f64) -> f32 {
        value as f32
    }

    fn to_bits_u64(self) -> u64 {
        u64::from(self.to_bits())
    }

    fn to_f64(self) -> f64 {
        f64::from(self)
    }
}

impl Element for f64 {
    const DTYPE: DType = DType::F64;

    fn slice(data: &TensorData) -> Option<&[f64]> {
        match data {
            TensorData::F64(v) => Some(v),
            TensorData::F32(_) => None,
        }
    }

    fn wrap(values: Vec<f64>) -> TensorData {
        TensorData::F64(values)
    }

    fn from_f64(value: f64) -> f64 {
        value
    }

    fn to_bits_u64(self) -> u64 {
        self.to_bits()
    }

    fn to_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::F64(_) => DType::F64,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A tensor value: spec plus flat row-major data.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorValue {
    spec: TensorSpec,
    data: TensorData,
}

impl TensorValue {
    pub fn new(spec: TensorSpec, data: TensorData) -> Result<Self, TensorError> {
        if data.len() != spec.numel() || data.dtype() != spec.dtype || spec.dims.is_empty() {
            return Err(TensorError::Length {
                len: data.len(),
                spec: spec.to_string(),
            });
        }
        Ok(TensorValue { spec, data })
    }

    pub fn from_vec<T: Element>(dims: impl Into<Vec<usize>>, values: Vec<T>) -> Result<Self, TensorError> {
        TensorValue::new(TensorSpec::new(T::DTYPE, dims), T::wrap(values))
    }

    pub fn zeros(spec: TensorSpec) -> Self {
        let n = spec.numel();
        let data = match spec.dtype {
            DType::F32 => TensorData::F32(vec![0.0; n]),
            DType::F64 => TensorData::F64(vec![0.0; n]),
        };
        TensorValue { spec, data }
    }

    pub fn spec(&self) -> &TensorSpec {
        &self.spec
    }

    pub fn dims(&self) -> &[usize] {
        &self.spec.dims
    }

    pub fn dtype(&self) -> DType {
        self.spec.dtype
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn into_data(self) -> TensorData {
        self.data
    }

    pub fn as_slice<T: Element>(&self) -> Option<&[T]> {
        T::slice(&self.data)
    }

    /// Values widened to f64, for reporting.
    pub fn to_f64_vec(&self) -> Vec<f64> {
        match &self.data {
            TensorData::F32(v) => v.iter().map(|x| f64::from(*x)).collect(),
            TensorData::F64(v) => v.clone(),
        }
    }

    pub fn with_layout(mut self, layout: crate::ir::Layout) -> Self {
        self.spec.layout = layout;
        self
    }

    /// Reinterprets the data under new extents with the same element count.
    pub fn reshaped(self, dims: Vec<usize>) -> Result<Self, TensorError> {
        if dims.iter().product::<usize>() != self.spec.numel() {
            return Err(TensorError::shape(
                "reshape",
                format!("cannot view {} as {dims:?}", self.spec),
            ));
        }
        Ok(TensorValue {
            spec: TensorSpec::new(self.spec.dtype, dims),
            data: self.data,
        })
    }

    /// Bitwise equality of shape and every element.
    pub fn bit_eq(&self, other: &TensorValue) -> bool {
        if !self.spec.same_shape(&other.spec) {
            return false;
        }
        match (&self.data, &other.data) {
            (TensorData::F32(a), TensorData::F32(b)) => a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()),
            (TensorData::F64(a), TensorData::F64(b)) => a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()),
            _ => false,
        }
    }

    pub fn all_finite(&self) -> bool {
        match &self.data {
            TensorData::F32(v) => v.iter().all(|x| x.is_finite()),
            TensorData::F64(v) => v.iter().all(|x| x.is_finite()),
        }
    }
}

/// Row-major strides for the given extents.
pub(crate) fn strides(dims: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; dims.len()];
    for i in (0..dims.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * dims[i + 1];
    }
    strides
}
