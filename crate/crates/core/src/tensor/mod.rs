//! Dense row-major tensors and the forward numerical primitives.
//!
//! [`Tensor`] is a plain contiguous buffer plus its dims. There are no views
//! or strides; every op allocates its output. Element types are `f32` (the
//! fast path) and `f64` (the path every tolerance in the test-suite is
//! stated for).

mod io;
pub mod ops;

use std::fmt::Debug;

use num_traits::{Float, NumAssign};
use twofloat::TwoFloat;

use crate::error::{Error, Result};

pub use io::{read_tensor, read_tensor_file, write_tensor, write_tensor_file, AnyTensor, MAGIC};

/// On-disk dtype code.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DType {
    Real32,
    Real64,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::Real32 => 0,
            DType::Real64 => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DType::Real32),
            1 => Some(DType::Real64),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::Real32 => 4,
            DType::Real64 => 8,
        }
    }
}

/// Scalar element of a [`Tensor`].
pub trait Element: Float + NumAssign + Default + Debug + Send + Sync + 'static {
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;

    /// `self / rhs`, overridden where the plain operator loses precision.
    fn quotient(self, rhs: Self) -> Self {
        self / rhs
    }
}

/// An [`Element`] with a `TVTENSOR` dtype code.
pub trait Storable: Element {
    const DTYPE: DType;

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Element for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Storable for f32 {
    const DTYPE: DType = DType::Real32;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Element for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

impl Storable for f64 {
    const DTYPE: DType = DType::Real64;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

/// Double-double, used as a high-precision reference in gradient checks.
impl Element for TwoFloat {
    fn from_f64(v: f64) -> Self {
        TwoFloat::from(v)
    }
    fn to_f64(self) -> f64 {
        self.hi() + self.lo()
    }

    // the crate's double-double division drops the low word when the
    // divisor's reciprocal rounds exactly; one residual step restores it
    fn quotient(self, rhs: Self) -> Self {
        let q = self / rhs;
        q + (self - q * rhs) / rhs
    }
}

/// Dense n-dimensional array, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T: Element = f64> {
    dims: Vec<usize>,
    data: Vec<T>,
}

impl<T: Storable> Tensor<T> {
    pub fn dtype(&self) -> DType {
        T::DTYPE
    }
}

fn check_dims(dims: &[usize]) -> Result<usize> {
    if dims.is_empty() {
        return Err(Error::InvalidDims {
            dims: dims.to_vec(),
            reason: "at least one dim is required".into(),
        });
    }
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::InvalidDims {
            dims: dims.to_vec(),
            reason: "all dims must be >= 1".into(),
        });
    }
    Ok(dims.iter().product())
}

impl<T: Element> Tensor<T> {
    pub fn new(dims: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let expected = check_dims(&dims)?;
        if data.len() != expected {
            return Err(Error::LengthMismatch {
                dims,
                len: data.len(),
                expected,
            });
        }
        Ok(Tensor { dims, data })
    }

    pub fn filled(dims: &[usize], value: T) -> Result<Self> {
        let n = check_dims(dims)?;
        Ok(Tensor {
            dims: dims.to_vec(),
            data: vec![value; n],
        })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        Self::filled(dims, T::zero())
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            dims: vec![1],
            data: vec![value],
        }
    }

    /// Builds a tensor by evaluating `f` at each flat (row-major) offset.
    pub fn from_fn(dims: &[usize], f: impl FnMut(usize) -> T) -> Result<Self> {
        let n = check_dims(dims)?;
        Ok(Tensor {
            dims: dims.to_vec(),
            data: (0..n).map(f).collect(),
        })
    }

    /// Internal constructor for callers that already validated `dims`.
    pub(crate) fn from_parts(dims: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        Tensor { dims, data }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    fn offset(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.dims.len() || index.iter().zip(&self.dims).any(|(i, d)| i >= d) {
            return Err(Error::IndexOutOfBounds {
                index: index.to_vec(),
                dims: self.dims.clone(),
            });
        }
        Ok(index
            .iter()
            .zip(&self.dims)
            .fold(0, |acc, (&i, &d)| acc * d + i))
    }

    pub fn get(&self, index: &[usize]) -> Result<T> {
        Ok(self.data[self.offset(index)?])
    }

    pub fn set(&mut self, index: &[usize], value: T) -> Result<()> {
        let off = self.offset(index)?;
        self.data[off] = value;
        Ok(())
    }

    pub fn reshape(self, dims: &[usize]) -> Result<Self> {
        let n = check_dims(dims)?;
        if n != self.data.len() {
            return Err(Error::LengthMismatch {
                dims: dims.to_vec(),
                len: self.data.len(),
                expected: n,
            });
        }
        Ok(Tensor {
            dims: dims.to_vec(),
            data: self.data,
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.same_dims(other, "zip_map")?;
        Ok(Tensor {
            dims: self.dims.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|x| x * s)
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: T, other: &Self) -> Result<()> {
        self.same_dims(other, "axpy")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn sum(&self) -> T {
        let mut acc = T::zero();
        for &x in &self.data {
            acc += x;
        }
        acc
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        self.same_dims(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a.to_f64() - b.to_f64()).abs())
            .fold(0.0, f64::max))
    }

    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&x| U::from_f64(x.to_f64())).collect(),
        }
    }

    pub(crate) fn same_dims(&self, other: &Self, what: &str) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::shape(what, "left", &self.dims, "right", &other.dims));
        }
        Ok(())
    }

    /// Dims as `(c, h, w)`; errors unless the tensor is 3-D.
    pub fn chw(&self, name: &str) -> Result<(usize, usize, usize)> {
        match self.dims[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::InvalidDims {
                dims: self.dims.clone(),
                reason: format!("{name} must be 3-D [c, h, w]"),
            }),
        }
    }
}
