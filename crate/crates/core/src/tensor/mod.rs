//! Dense row-major tensors and the layer kernels needed to run and
//! differentiate AlexNet-, VGG- and ResNet-style networks.
//!
//! Kernels are pure functions. Every kernel is generic over [`Scalar`] so the
//! same code runs in single precision for production weights and in double
//! precision for gradient checks.

mod conv;
mod layer;
mod linear;
mod pointwise;
mod pool;
mod upsample;

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::Float;
use thiserror::Error;

pub use conv::{conv2d_backward_input, conv2d_forward, Conv2d};
pub use layer::{Layer, LayerKind};
pub use linear::{linear_backward_input, linear_forward, Linear};
pub use pointwise::{pointwise_backward, pointwise_forward, BatchNorm2d, Pointwise};
pub use pool::{
    adaptive_avgpool2d_backward, adaptive_avgpool2d_forward, avgpool2d_backward, avgpool2d_forward, maxpool2d_backward,
    maxpool2d_forward, ArgmaxIndices, Pool2d,
};
pub use upsample::{bilinear_upsample, bilinear_upsample_plane};

/// Floating point element type of a [`Tensor`].
pub trait Scalar: Float + Sum + Debug + Display + Default + Send + Sync + 'static {
    /// Bytes per element in the little-endian blob encoding.
    const BYTES: usize;

    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    const BYTES: usize = 4;

    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        f64::from(self)
    }
}

impl Scalar for f64 {
    const BYTES: usize = 8;

    #[inline]
    fn of(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("shape {shape:?} holds {expected} elements but {actual} were given")]
    LengthMismatch { shape: Vec<usize>, expected: usize, actual: usize },
    #[error("non-finite value {value} at flat index {index}")]
    NonFinite { index: usize, value: f64 },
    #[error("{op}: expected {expected}, got shape {actual:?}")]
    ShapeMismatch { op: &'static str, expected: String, actual: Vec<usize> },
    #[error("{op}: {reason}")]
    InvalidParams { op: &'static str, reason: String },
    #[error("{op}: index {index} out of range for {len} elements")]
    IndexOutOfRange { op: &'static str, index: usize, len: usize },
}

pub(crate) fn shape_mismatch(op: &'static str, expected: impl Into<String>, actual: &[usize]) -> TensorError {
    TensorError::ShapeMismatch { op, expected: expected.into(), actual: actual.to_vec() }
}

/// Dense tensor with an explicit shape and contiguous row-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    /// Builds a tensor, rejecting length mismatches and NaN/Inf values.
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self, TensorError> {
        let t = Self::from_parts(shape, data)?;
        t.validate()?;
        Ok(t)
    }

    /// Like [`Tensor::new`] without the finiteness scan.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Result<Self, TensorError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::LengthMismatch { shape, expected, actual: data.len() });
        }
        Ok(Self { shape, data })
    }

    /// Kernel outputs, whose length is correct by construction.
    pub(crate) fn from_raw(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; n] }
    }

    pub fn from_vec(data: Vec<T>) -> Result<Self, TensorError> {
        Self::new(vec![data.len()], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Checks that every element is finite.
    pub fn validate(&self) -> Result<(), TensorError> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(TensorError::NonFinite { index, value: self.data[index].as_f64() }),
            None => Ok(()),
        }
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self, TensorError> {
        Self::from_parts(shape, self.data)
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|v| U::of(v.as_f64())).collect() }
    }

    /// Interprets the tensor as `(channels, height, width)`.
    pub fn dims3(&self, op: &'static str) -> Result<(usize, usize, usize), TensorError> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(shape_mismatch(op, "a rank-3 CHW tensor", &self.shape)),
        }
    }

    /// Row-major slice of one channel of a CHW tensor.
    pub fn channel(&self, c: usize) -> &[T] {
        let plane = self.shape[1..].iter().product::<usize>();
        &self.data[c * plane..(c + 1) * plane]
    }

    pub(crate) fn channel_mut(&mut self, c: usize) -> &mut [T] {
        let plane = self.shape[1..].iter().product::<usize>();
        &mut self.data[c * plane..(c + 1) * plane]
    }

    /// Element-wise `self += other`; shapes must match.
    pub(crate) fn add_assign(&mut self, other: &Tensor<T>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + *b;
        }
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }
}
