//! Strided 2-D convolution (cross-correlation) with exact gradients.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// Parameters of one convolution layer.
///
/// `weights` has shape `(out_channels, in_channels, kh, kw)`; the bias is one
/// offset per output channel. Padding is zero-padding on both spatial axes.
#[derive(Debug, Clone)]
pub struct ConvLayerParams<T> {
    pub weights: Tensor<T>,
    pub bias: Vec<T>,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Scalar> ConvLayerParams<T> {
    pub fn new(weights: Tensor<T>, bias: Vec<T>, stride: usize, padding: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::Config("conv stride must be positive".into()));
        }
        if bias.len() != weights.shape().batch {
            return Err(Error::Config(format!(
                "conv bias length {} does not match {} output channels",
                bias.len(),
                weights.shape().batch
            )));
        }
        Ok(ConvLayerParams {
            weights,
            bias,
            stride,
            padding,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.weights.shape().batch
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape().channels
    }

    pub fn kernel(&self) -> (usize, usize) {
        (self.weights.shape().height, self.weights.shape().width)
    }

    /// Output spatial extent: `floor((in + 2*padding - k) / stride) + 1`.
    pub fn output_extent(&self, in_h: usize, in_w: usize) -> Result<(usize, usize)> {
        let (kh, kw) = self.kernel();
        let padded_h = in_h + 2 * self.padding;
        let padded_w = in_w + 2 * self.padding;
        if padded_h < kh || padded_w < kw {
            return Err(Error::Config(format!(
                "input {in_h}x{in_w} with padding {} is smaller than kernel {kh}x{kw}",
                self.padding
            )));
        }
        Ok((
            (padded_h - kh) / self.stride + 1,
            (padded_w - kw) / self.stride + 1,
        ))
    }
}

/// Valid output-index range `[lo, hi)` such that `o*stride + k - pad` stays
/// inside `[0, extent)`.
#[inline]
fn out_range(extent: usize, out_extent: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if k < pad {
        (pad - k).div_ceil(stride)
    } else {
        0
    };
    // largest o with o*stride + k - pad <= extent - 1
    let hi = if extent + pad > k {
        (((extent + pad - 1 - k) / stride) + 1).min(out_extent)
    } else {
        0
    };
    (lo.min(hi), hi)
}

/// Cross-correlates `input` with the layer kernel and adds the bias.
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    layer: &ConvLayerParams<T>,
) -> Result<Tensor<T>> {
    let ishape = input.shape();
    if ishape.channels != layer.in_channels() {
        return Err(Error::Config(format!(
            "conv expects {} input channels, got {}",
            layer.in_channels(),
            ishape.channels
        )));
    }
    let (out_h, out_w) = layer.output_extent(ishape.height, ishape.width)?;
    let out_c = layer.out_channels();
    let (kh, kw) = layer.kernel();
    let (stride, pad) = (layer.stride, layer.padding);

    let mut out = Tensor::zeros(Shape::new(ishape.batch, out_c, out_h, out_w));
    let out_hw = out_h * out_w;
    let in_w = ishape.width;
    let wdata = layer.weights.data();
    let kchunk = layer.in_channels() * kh * kw;

    out.data_mut()
        .par_chunks_mut(out_hw)
        .enumerate()
        .for_each(|(plane_idx, out_plane)| {
            let b = plane_idx / out_c;
            let oc = plane_idx % out_c;
            out_plane.fill(layer.bias[oc]);
            for ic in 0..ishape.channels {
                let in_plane = input.plane(b, ic);
                for ky in 0..kh {
                    let (oy_lo, oy_hi) = out_range(ishape.height, out_h, ky, stride, pad);
                    for kx in 0..kw {
                        let w = wdata[oc * kchunk + (ic * kh + ky) * kw + kx];
                        if w == T::zero() {
                            continue;
                        }
                        let (ox_lo, ox_hi) = out_range(in_w, out_w, kx, stride, pad);
                        for oy in oy_lo..oy_hi {
                            let iy = oy * stride + ky - pad;
                            let in_row = &in_plane[iy * in_w..(iy + 1) * in_w];
                            let out_row = &mut out_plane[oy * out_w..(oy + 1) * out_w];
                            for ox in ox_lo..ox_hi {
                                let ix = ox * stride + kx - pad;
                                out_row[ox] = out_row[ox] + w * in_row[ix];
                            }
                        }
                    }
                }
            }
        });
    Ok(out)
}

/// Gradients of [`conv2d_forward`] with respect to its input, weights, and bias.
#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Vec<T>,
}

pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    layer: &ConvLayerParams<T>,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let ishape = input.shape();
    if ishape.channels != layer.in_channels() {
        return Err(Error::Config(format!(
            "conv expects {} input channels, got {}",
            layer.in_channels(),
            ishape.channels
        )));
    }
    let (out_h, out_w) = layer.output_extent(ishape.height, ishape.width)?;
    let expected = Shape::new(ishape.batch, layer.out_channels(), out_h, out_w);
    if grad_out.shape() != expected {
        return Err(Error::Config(format!(
            "grad_out shape {} does not match conv output {expected}",
            grad_out.shape()
        )));
    }

    let (kh, kw) = layer.kernel();
    let (stride, pad) = (layer.stride, layer.padding);
    let in_c = ishape.channels;
    let out_c = layer.out_channels();
    let in_w = ishape.width;
    let wdata = layer.weights.data();
    let kchunk = in_c * kh * kw;

    // Bias: per-channel sum of grad_out, batches accumulated in order.
    let mut grad_bias = vec![T::zero(); out_c];
    grad_bias.par_iter_mut().enumerate().for_each(|(oc, gb)| {
        let mut acc = T::zero();
        for b in 0..ishape.batch {
            for &g in grad_out.plane(b, oc) {
                acc = acc + g;
            }
        }
        *gb = acc;
    });

    // Weights: each output channel owns a disjoint slice of the gradient.
    let mut grad_weights = Tensor::zeros(layer.weights.shape());
    grad_weights
        .data_mut()
        .par_chunks_mut(kchunk)
        .enumerate()
        .for_each(|(oc, gw)| {
            for b in 0..ishape.batch {
                let g_plane = grad_out.plane(b, oc);
                for ic in 0..in_c {
                    let in_plane = input.plane(b, ic);
                    for ky in 0..kh {
                        let (oy_lo, oy_hi) = out_range(ishape.height, out_h, ky, stride, pad);
                        for kx in 0..kw {
                            let (ox_lo, ox_hi) = out_range(in_w, out_w, kx, stride, pad);
                            let mut acc = T::zero();
                            for oy in oy_lo..oy_hi {
                                let iy = oy * stride + ky - pad;
                                let in_row = &in_plane[iy * in_w..(iy + 1) * in_w];
                                let g_row = &g_plane[oy * out_w..(oy + 1) * out_w];
                                for ox in ox_lo..ox_hi {
                                    let ix = ox * stride + kx - pad;
                                    acc = acc + in_row[ix] * g_row[ox];
                                }
                            }
                            let slot = (ic * kh + ky) * kw + kx;
                            gw[slot] = gw[slot] + acc;
                        }
                    }
                }
            }
        });

    // Input: scatter the adjoint into per-(batch, channel) planes, each plane
    // owned by one task.
    let mut grad_input = Tensor::zeros(ishape);
    let in_hw = ishape.height * in_w;
    grad_input
        .data_mut()
        .par_chunks_mut(in_hw)
        .enumerate()
        .for_each(|(plane_idx, gi_plane)| {
            let b = plane_idx / in_c;
            let ic = plane_idx % in_c;
            for oc in 0..out_c {
                let g_plane = grad_out.plane(b, oc);
                for ky in 0..kh {
                    let (oy_lo, oy_hi) = out_range(ishape.height, out_h, ky, stride, pad);
                    for kx in 0..kw {
                        let w = wdata[oc * kchunk + (ic * kh + ky) * kw + kx];
                        if w == T::zero() {
                            continue;
                        }
                        let (ox_lo, ox_hi) = out_range(in_w, out_w, kx, stride, pad);
                        for oy in oy_lo..oy_hi {
                            let iy = oy * stride + ky - pad;
                            let g_row = &g_plane[oy * out_w..(oy + 1) * out_w];
                            let gi_row = &mut gi_plane[iy * in_w..(iy + 1) * in_w];
                            for ox in ox_lo..ox_hi {
                                let ix = ox * stride + kx - pad;
                                gi_row[ix] = gi_row[ix] + w * g_row[ox];
                            }
                        }
                    }
                }
            }
        });

    Ok(ConvGrads {
        input: grad_input,
        weights: grad_weights,
        bias: grad_bias,
    })
}
