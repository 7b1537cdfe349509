//! Elementwise activations and per-channel instance normalization.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Variance guard inside the normalization square root. Small enough that a
/// unit-variance channel still normalizes to variance 1 within 1e-6, large
/// enough to keep constant channels finite in f32.
pub const INSTANCE_NORM_EPS: f64 = 1e-8;

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// ReLU subgradient at 0 is 0.
pub fn relu_backward<T: Scalar>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(input.shape(), data).expect("shape preserved")
}

pub fn leaky_relu<T: Scalar>(input: &Tensor<T>, slope: f64) -> Tensor<T> {
    let a = T::from_f64(slope);
    input.map(move |v| if v > T::zero() { v } else { a * v })
}

pub fn leaky_relu_backward<T: Scalar>(
    input: &Tensor<T>,
    grad_out: &Tensor<T>,
    slope: f64,
) -> Tensor<T> {
    let a = T::from_f64(slope);
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { a * g })
        .collect();
    Tensor::from_vec(input.shape(), data).expect("shape preserved")
}

pub fn tanh_map<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| v.tanh())
}

/// Takes the forward *output* (tanh' = 1 - y^2).
pub fn tanh_backward<T: Scalar>(output: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let data = output
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&y, &g)| g * (T::one() - y * y))
        .collect();
    Tensor::from_vec(output.shape(), data).expect("shape preserved")
}

#[derive(Debug, Clone)]
pub struct InstanceNormCache<T> {
    /// Normalized output, kept for the backward pass.
    pub output: Tensor<T>,
    /// One reciprocal standard deviation per (batch, channel) plane.
    pub inv_std: Vec<T>,
}

/// Normalizes each (batch, channel) plane to zero mean and unit variance.
pub fn instance_norm<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, InstanceNormCache<T>)> {
    let shape = input.shape();
    let n = shape.height * shape.width;
    if n < 2 {
        return Err(Error::Config(
            "instance norm needs at least 2 spatial elements".into(),
        ));
    }
    let inv_n = T::from_f64(1.0 / n as f64);
    let eps = T::from_f64(INSTANCE_NORM_EPS);
    let mut out = Tensor::zeros(shape);
    let mut inv_std = Vec::with_capacity(shape.batch * shape.channels);
    for b in 0..shape.batch {
        for c in 0..shape.channels {
            let plane = input.plane(b, c);
            let mean = plane.iter().copied().sum::<T>() * inv_n;
            let var = plane
                .iter()
                .map(|&v| (v - mean) * (v - mean))
                .sum::<T>()
                * inv_n;
            let r = (var + eps).sqrt().recip();
            inv_std.push(r);
            for (slot, &v) in out.plane_mut(b, c).iter_mut().zip(plane) {
                *slot = (v - mean) * r;
            }
        }
    }
    Ok((
        out.clone(),
        InstanceNormCache {
            output: out,
            inv_std,
        },
    ))
}

/// dx = r * (dy - mean(dy) - y * mean(dy * y)), per plane.
pub fn instance_norm_backward<T: Scalar>(
    cache: &InstanceNormCache<T>,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let shape = cache.output.shape();
    if grad_out.shape() != shape {
        return Err(Error::Usage(format!(
            "instance norm backward: gradient shape {} does not match cached output {shape}",
            grad_out.shape()
        )));
    }
    let n = shape.height * shape.width;
    let inv_n = T::from_f64(1.0 / n as f64);
    let mut grad_in = Tensor::zeros(shape);
    for b in 0..shape.batch {
        for c in 0..shape.channels {
            let y = cache.output.plane(b, c);
            let g = grad_out.plane(b, c);
            let r = cache.inv_std[b * shape.channels + c];
            let g_mean = g.iter().copied().sum::<T>() * inv_n;
            let gy_mean = g.iter().zip(y).map(|(&gi, &yi)| gi * yi).sum::<T>() * inv_n;
            for ((slot, &gi), &yi) in grad_in.plane_mut(b, c).iter_mut().zip(g).zip(y) {
                *slot = r * (gi - g_mean - yi * gy_mean);
            }
        }
    }
    Ok(grad_in)
}

/// The elementwise/normalization operators behind one dispatchable surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PointwiseKind {
    Relu,
    LeakyRelu(f64),
    Tanh,
    InstanceNorm,
}

#[derive(Debug, Clone)]
pub enum PointwiseCache<T> {
    Input(Tensor<T>),
    Output(Tensor<T>),
    Norm(InstanceNormCache<T>),
}

pub fn pointwise_forward<T: Scalar>(
    input: &Tensor<T>,
    kind: PointwiseKind,
) -> Result<(Tensor<T>, PointwiseCache<T>)> {
    match kind {
        PointwiseKind::Relu => Ok((relu(input), PointwiseCache::Input(input.clone()))),
        PointwiseKind::LeakyRelu(a) => {
            Ok((leaky_relu(input, a), PointwiseCache::Input(input.clone())))
        }
        PointwiseKind::Tanh => {
            let out = tanh_map(input);
            Ok((out.clone(), PointwiseCache::Output(out)))
        }
        PointwiseKind::InstanceNorm => {
            let (out, cache) = instance_norm(input)?;
            Ok((out, PointwiseCache::Norm(cache)))
        }
    }
}

pub fn pointwise_backward<T: Scalar>(
    kind: PointwiseKind,
    cache: &PointwiseCache<T>,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    match (kind, cache) {
        (PointwiseKind::Relu, PointwiseCache::Input(x)) => Ok(relu_backward(x, grad_out)),
        (PointwiseKind::LeakyRelu(a), PointwiseCache::Input(x)) => {
            Ok(leaky_relu_backward(x, grad_out, a))
        }
        (PointwiseKind::Tanh, PointwiseCache::Output(y)) => Ok(tanh_backward(y, grad_out)),
        (PointwiseKind::InstanceNorm, PointwiseCache::Norm(c)) => {
            instance_norm_backward(c, grad_out)
        }
        _ => Err(Error::Usage(
            "pointwise backward: cache does not match operation kind".into(),
        )),
    }
}
