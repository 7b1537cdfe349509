//! Minimal dense 4-D tensor engine.
//!
//! Tensors are `(batch, channel, height, width)` arrays stored row-major with
//! batch outermost. Every operator comes in a forward and an exact backward
//! flavor; none of them build a graph — callers thread caches by hand. All
//! operators are pure: inputs are borrowed immutably and outputs are freshly
//! allocated, so tensors can be shared freely across worker threads. Internal
//! parallelism always partitions *output* elements and keeps every reduction
//! in a fixed serial order, which makes results bitwise independent of the
//! worker count.

mod conv;
mod pointwise;
mod resample;

pub use conv::{conv2d_backward, conv2d_forward, ConvGrads, ConvLayerParams};
pub use pointwise::{
    instance_norm, instance_norm_backward, leaky_relu, leaky_relu_backward, pointwise_backward,
    pointwise_forward, relu, relu_backward, tanh_map, tanh_backward, InstanceNormCache,
    PointwiseCache, PointwiseKind, INSTANCE_NORM_EPS,
};
pub use resample::{
    bilinear_downsample, bilinear_downsample_backward, nearest_upsample, nearest_upsample_backward,
};

use crate::error::{Error, Result};

/// Element type for tensors: `f64` for gradient checks, `f32` for training
/// and benchmarks.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + std::iter::Sum
    + std::fmt::Debug
    + std::fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
    const NAME: &'static str;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    /// Raw IEEE bits, widened to u64; used for bitwise checksums.
    fn bits(self) -> u64;
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";

    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn bits(self) -> u64 {
        self.to_bits() as u64
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";

    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn bits(self) -> u64 {
        self.to_bits()
    }
}

/// Extents of a 4-D tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn new(batch: usize, channels: usize, height: usize, width: usize) -> Self {
        Shape {
            batch,
            channels,
            height,
            width,
        }
    }

    pub fn count(&self) -> usize {
        self.batch * self.channels * self.height * self.width
    }

    #[inline]
    pub fn index(&self, b: usize, c: usize, y: usize, x: usize) -> usize {
        ((b * self.channels + c) * self.height + y) * self.width + x
    }

    pub fn spatial(&self) -> (usize, usize) {
        (self.height, self.width)
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "({}, {}, {}, {})",
            self.batch, self.channels, self.height, self.width
        )
    }
}

/// Dense 4-D array, immutable once produced by an operation.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            shape,
            data: vec![T::zero(); shape.count()],
        }
    }

    /// Fallible allocation; benchmark stages use this so an oversized
    /// resolution degrades into a reported failure instead of an abort.
    pub fn try_zeros(shape: Shape) -> Result<Self> {
        let mut data = Vec::new();
        data.try_reserve_exact(shape.count()).map_err(|_| {
            Error::Alloc(format!(
                "tensor of shape {shape} needs {} elements",
                shape.count()
            ))
        })?;
        data.resize(shape.count(), T::zero());
        Ok(Tensor { shape, data })
    }

    pub fn filled(shape: Shape, value: T) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.count()],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.count() {
            return Err(Error::Config(format!(
                "data length {} does not match shape {shape}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(shape.count());
        for b in 0..shape.batch {
            for c in 0..shape.channels {
                for y in 0..shape.height {
                    for x in 0..shape.width {
                        data.push(f(b, c, y, x));
                    }
                }
            }
        }
        Tensor { shape, data }
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

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, b: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.shape.index(b, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, b: usize, c: usize, y: usize, x: usize, value: T) {
        let i = self.shape.index(b, c, y, x);
        self.data[i] = value;
    }

    /// One `(batch, channel)` plane of `height * width` contiguous values.
    #[inline]
    pub fn plane(&self, b: usize, c: usize) -> &[T] {
        let hw = self.shape.height * self.shape.width;
        let start = (b * self.shape.channels + c) * hw;
        &self.data[start..start + hw]
    }

    #[inline]
    pub fn plane_mut(&mut self, b: usize, c: usize) -> &mut [T] {
        let hw = self.shape.height * self.shape.width;
        let start = (b * self.shape.channels + c) * hw;
        &mut self.data[start..start + hw]
    }

    pub fn map(&self, f: impl Fn(T) -> T + Sync) -> Tensor<T> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Converts element precision (used when moving between gradient-check
    /// and benchmark dtypes).
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| U::from_f64(v.to_f64())).collect(),
        }
    }
}

/// Stacks two tensors along the channel axis.
pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.batch != sb.batch || sa.spatial() != sb.spatial() {
        return Err(Error::Config(format!(
            "cannot concatenate {sa} with {sb} on channels"
        )));
    }
    let shape = Shape::new(sa.batch, sa.channels + sb.channels, sa.height, sa.width);
    let mut data = Vec::with_capacity(shape.count());
    for bi in 0..sa.batch {
        for c in 0..sa.channels {
            data.extend_from_slice(a.plane(bi, c));
        }
        for c in 0..sb.channels {
            data.extend_from_slice(b.plane(bi, c));
        }
    }
    Tensor::from_vec(shape, data)
}

/// Copies out the channel range `[from, to)`.
pub fn slice_channels<T: Scalar>(t: &Tensor<T>, from: usize, to: usize) -> Result<Tensor<T>> {
    let s = t.shape();
    if from > to || to > s.channels {
        return Err(Error::Config(format!(
            "channel range {from}..{to} out of bounds for {s}"
        )));
    }
    let shape = Shape::new(s.batch, to - from, s.height, s.width);
    let mut data = Vec::with_capacity(shape.count());
    for b in 0..s.batch {
        for c in from..to {
            data.extend_from_slice(t.plane(b, c));
        }
    }
    Tensor::from_vec(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexing_is_row_major_batch_outermost() {
        let shape = Shape::new(2, 3, 4, 5);
        assert_eq!(shape.index(0, 0, 0, 0), 0);
        assert_eq!(shape.index(0, 0, 0, 1), 1);
        assert_eq!(shape.index(0, 0, 1, 0), 5);
        assert_eq!(shape.index(0, 1, 0, 0), 20);
        assert_eq!(shape.index(1, 0, 0, 0), 60);
        assert_eq!(shape.count(), 120);
    }

    #[test]
    fn from_vec_rejects_length_mismatch() {
        let err = Tensor::<f64>::from_vec(Shape::new(1, 1, 2, 2), vec![0.0; 3]);
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn plane_views_are_contiguous() {
        let t = Tensor::<f64>::from_fn(Shape::new(1, 2, 2, 2), |_, c, y, x| {
            (c * 100 + y * 10 + x) as f64
        });
        assert_eq!(t.plane(0, 1), &[100.0, 101.0, 110.0, 111.0]);
    }
}
