//! Dense rank-4 tensors in `(n, c, h, w)` layout and the differentiable
//! kernels the network is assembled from.
//!
//! Every kernel is a pure function. Backward passes are explicit functions
//! taking the upstream gradient plus whatever the forward pass consumed;
//! there is no tape.

mod conv;
mod ops;

use std::fmt;

pub use conv::{conv2d_backward, conv2d_forward, ConvGrads, ConvSpec};
pub use ops::{
    add, add_backward, concat_channels, concat_channels_backward, dihedral, dihedral_inverse,
    elu_backward, elu_forward, pixel_shuffle, pixel_shuffle_backward, pixel_unshuffle,
    pixel_unshuffle_backward, split_channels, split_channels_backward,
};

/// Floating point element type a [`Tensor`] can hold.
///
/// Only `f32` and `f64` implement it. Reductions are carried out in `f64`
/// regardless of the storage type.
pub trait Scalar:
    Copy
    + Default
    + PartialEq
    + PartialOrd
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + 'static
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Neg<Output = Self>
    + std::ops::AddAssign
{
    const ZERO: Self;
    const ONE: Self;
    const NAME: &'static str;

    fn to_f64(self) -> f64;
    fn from_f64(v: f64) -> Self;
    fn exp_m1(self) -> Self;
    fn exp(self) -> Self;
    fn is_finite(self) -> bool;
}

impl Scalar for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    const NAME: &'static str = "f32";

    #[inline(always)]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline(always)]
    fn exp_m1(self) -> Self {
        f32::exp_m1(self)
    }
    #[inline(always)]
    fn exp(self) -> Self {
        f32::exp(self)
    }
    #[inline(always)]
    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }
}

impl Scalar for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    const NAME: &'static str = "f64";

    #[inline(always)]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline(always)]
    fn exp_m1(self) -> Self {
        f64::exp_m1(self)
    }
    #[inline(always)]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline(always)]
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

/// One of the four tensor axes, used to name the culprit in shape errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Batch,
    Channel,
    Height,
    Width,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::Batch => "batch",
            Axis::Channel => "channel",
            Axis::Height => "height",
            Axis::Width => "width",
        })
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: {axis} dimension mismatch (expected {expected}, found {found})")]
    DimMismatch {
        op: &'static str,
        axis: Axis,
        expected: usize,
        found: usize,
    },
    #[error("{op}: {channels} channels not divisible by {factor}")]
    ChannelDivisibility {
        op: &'static str,
        channels: usize,
        factor: usize,
    },
    #[error("{op}: spatial size {h}x{w} not divisible by {factor}")]
    SpatialDivisibility {
        op: &'static str,
        h: usize,
        w: usize,
        factor: usize,
    },
    #[error("invalid shape {0}: every dimension must be at least 1")]
    EmptyDimension(Shape),
    #[error("data length {len} does not match shape {shape} ({expected} elements)")]
    LengthMismatch {
        shape: Shape,
        len: usize,
        expected: usize,
    },
    #[error("{op}: unsupported kernel {kernel}x{kernel} with padding {padding}")]
    UnsupportedKernel {
        op: &'static str,
        kernel: usize,
        padding: usize,
    },
    #[error("{op}: invalid argument: {msg}")]
    InvalidArgument { op: &'static str, msg: String },
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

/// Shape of a rank-4 tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w }
    }

    pub const fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    /// Elements in one `(h, w)` plane.
    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    /// Elements in one batch item.
    pub const fn item(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.c == 0 || self.h == 0 || self.w == 0 {
            return Err(TensorError::EmptyDimension(*self));
        }
        Ok(())
    }

    pub(crate) fn expect_eq(&self, other: &Shape, op: &'static str) -> Result<()> {
        let pairs = [
            (Axis::Batch, self.n, other.n),
            (Axis::Channel, self.c, other.c),
            (Axis::Height, self.h, other.h),
            (Axis::Width, self.w, other.w),
        ];
        for (axis, expected, found) in pairs {
            if expected != found {
                return Err(TensorError::DimMismatch {
                    op,
                    axis,
                    expected,
                    found,
                });
            }
        }
        Ok(())
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

/// Dense rank-4 tensor, row-major in `(n, c, h, w)` order.
#[derive(Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Shape,
    data: Vec<T>,
}

impl<T> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("dtype", &std::any::type_name::<T>())
            .field("shape", &self.shape)
            .finish_non_exhaustive()
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: Shape) -> Result<Self> {
        Self::full(shape, T::ZERO)
    }

    pub fn full(shape: Shape, value: T) -> Result<Self> {
        shape.validate()?;
        Ok(Self {
            shape,
            data: vec![value; shape.numel()],
        })
    }

    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        shape.validate()?;
        if data.len() != shape.numel() {
            return Err(TensorError::LengthMismatch {
                shape,
                len: data.len(),
                expected: shape.numel(),
            });
        }
        Ok(Self { shape, data })
    }

    /// Builds a tensor by evaluating `f(n, c, y, x)` at every index.
    pub fn from_fn(
        shape: Shape,
        mut f: impl FnMut(usize, usize, usize, usize) -> T,
    ) -> Result<Self> {
        shape.validate()?;
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for y in 0..shape.h {
                    for x in 0..shape.w {
                        data.push(f(n, c, y, x));
                    }
                }
            }
        }
        Ok(Self { shape, data })
    }

    pub(crate) fn from_parts_unchecked(shape: Shape, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.numel(), data.len());
        Self { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.shape.c + c) * self.shape.h + y) * self.shape.w + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.index(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: T) {
        let i = self.index(n, c, y, x);
        self.data[i] = v;
    }

    /// The `(h, w)` plane for batch item `n`, channel `c`.
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let start = self.index(n, c, 0, 0);
        &self.data[start..start + self.shape.plane()]
    }

    /// Same shape and contents, reinterpreted with new dimensions.
    pub fn reshape(self, shape: Shape) -> Result<Self> {
        Self::from_vec(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }

    /// Elementwise `self += other`.
    pub fn add_assign(&mut self, other: &Tensor<T>) -> Result<()> {
        self.shape.expect_eq(&other.shape, "add_assign")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    /// Batch item `n` as a standalone `(1, c, h, w)` tensor.
    pub fn item(&self, n: usize) -> Tensor<T> {
        let len = self.shape.item();
        Tensor {
            shape: Shape::new(1, self.shape.c, self.shape.h, self.shape.w),
            data: self.data[n * len..(n + 1) * len].to_vec(),
        }
    }

    /// Stacks equally shaped tensors along the batch axis.
    pub fn stack(items: &[Tensor<T>]) -> Result<Tensor<T>> {
        let first = items.first().ok_or(TensorError::InvalidArgument {
            op: "stack",
            msg: "no tensors to stack".into(),
        })?;
        let s = first.shape;
        let mut data = Vec::with_capacity(s.numel() * items.len());
        let mut n = 0;
        for t in items {
            let ts = t.shape;
            Shape::new(s.n, s.c, s.h, s.w)
                .expect_eq(&Shape::new(s.n, ts.c, ts.h, ts.w), "stack")?;
            data.extend_from_slice(&t.data);
            n += ts.n;
        }
        Ok(Tensor::from_parts_unchecked(
            Shape::new(n, s.c, s.h, s.w),
            data,
        ))
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> Result<f64> {
        self.shape.expect_eq(&other.shape, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.to_f64() - b.to_f64()).abs())
            .fold(0.0, f64::max))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|v| v.to_f64()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
