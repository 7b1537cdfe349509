//! Integer-factor resampling: bilinear (area) downsampling and
//! nearest-neighbor upsampling, with their adjoints.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// Downsamples by an integer factor, sampling bilinearly at the cell centers
/// of the output grid — for factor-aligned extents this is the uniform
/// average of each `factor x factor` block, which is what this computes.
pub fn bilinear_downsample<T: Scalar>(input: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    if factor == 0 {
        return Err(Error::Config("downsampling factor must be positive".into()));
    }
    let shape = input.shape();
    if shape.height % factor != 0 || shape.width % factor != 0 {
        return Err(Error::Config(format!(
            "extents {}x{} not divisible by downsampling factor {factor}",
            shape.height, shape.width
        )));
    }
    if factor == 1 {
        return Ok(input.clone());
    }
    let (out_h, out_w) = (shape.height / factor, shape.width / factor);
    let mut out = Tensor::zeros(Shape::new(shape.batch, shape.channels, out_h, out_w));
    let norm = T::from_f64(1.0 / (factor * factor) as f64);
    let in_w = shape.width;
    let out_hw = out_h * out_w;

    out.data_mut()
        .par_chunks_mut(out_hw)
        .enumerate()
        .for_each(|(plane_idx, out_plane)| {
            let b = plane_idx / shape.channels;
            let c = plane_idx % shape.channels;
            let in_plane = input.plane(b, c);
            for oy in 0..out_h {
                for ox in 0..out_w {
                    let mut acc = T::zero();
                    for dy in 0..factor {
                        let row = &in_plane[(oy * factor + dy) * in_w..];
                        for dx in 0..factor {
                            acc = acc + row[ox * factor + dx];
                        }
                    }
                    out_plane[oy * out_w + ox] = acc * norm;
                }
            }
        });
    Ok(out)
}

/// Adjoint of [`bilinear_downsample`]: spreads each output-cell gradient
/// uniformly over its source block.
pub fn bilinear_downsample_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    factor: usize,
) -> Result<Tensor<T>> {
    if factor == 0 {
        return Err(Error::Config("downsampling factor must be positive".into()));
    }
    if factor == 1 {
        return Ok(grad_out.clone());
    }
    let gshape = grad_out.shape();
    let shape = Shape::new(
        gshape.batch,
        gshape.channels,
        gshape.height * factor,
        gshape.width * factor,
    );
    let norm = T::from_f64(1.0 / (factor * factor) as f64);
    let mut grad_in = Tensor::zeros(shape);
    let in_hw = shape.height * shape.width;
    grad_in
        .data_mut()
        .par_chunks_mut(in_hw)
        .enumerate()
        .for_each(|(plane_idx, gi_plane)| {
            let b = plane_idx / shape.channels;
            let c = plane_idx % shape.channels;
            let g_plane = grad_out.plane(b, c);
            for iy in 0..shape.height {
                let g_row = &g_plane[(iy / factor) * gshape.width..];
                let gi_row = &mut gi_plane[iy * shape.width..(iy + 1) * shape.width];
                for (ix, slot) in gi_row.iter_mut().enumerate() {
                    *slot = g_row[ix / factor] * norm;
                }
            }
        });
    Ok(grad_in)
}

/// Replicates each input pixel over a `factor x factor` block:
/// `output[y][x] = input[y / factor][x / factor]`.
pub fn nearest_upsample<T: Scalar>(input: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    if factor == 0 {
        return Err(Error::Config("upsampling factor must be positive".into()));
    }
    if factor == 1 {
        return Ok(input.clone());
    }
    let ishape = input.shape();
    let shape = Shape::new(
        ishape.batch,
        ishape.channels,
        ishape.height * factor,
        ishape.width * factor,
    );
    let mut out = Tensor::try_zeros(shape)?;
    let out_hw = shape.height * shape.width;
    out.data_mut()
        .par_chunks_mut(out_hw)
        .enumerate()
        .for_each(|(plane_idx, out_plane)| {
            let b = plane_idx / shape.channels;
            let c = plane_idx % shape.channels;
            let in_plane = input.plane(b, c);
            for oy in 0..shape.height {
                let in_row = &in_plane[(oy / factor) * ishape.width..];
                let out_row = &mut out_plane[oy * shape.width..(oy + 1) * shape.width];
                for (ox, slot) in out_row.iter_mut().enumerate() {
                    *slot = in_row[ox / factor];
                }
            }
        });
    Ok(out)
}

/// Adjoint of [`nearest_upsample`]: sums each block of upstream gradients
/// into its source cell (replication transposes to block summation).
pub fn nearest_upsample_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    factor: usize,
) -> Result<Tensor<T>> {
    if factor == 0 {
        return Err(Error::Config("upsampling factor must be positive".into()));
    }
    if factor == 1 {
        return Ok(grad_out.clone());
    }
    let gshape = grad_out.shape();
    if gshape.height % factor != 0 || gshape.width % factor != 0 {
        return Err(Error::Config(format!(
            "gradient extents {}x{} not divisible by upsampling factor {factor}",
            gshape.height, gshape.width
        )));
    }
    let shape = Shape::new(
        gshape.batch,
        gshape.channels,
        gshape.height / factor,
        gshape.width / factor,
    );
    let mut grad_in = Tensor::zeros(shape);
    let in_hw = shape.height * shape.width;
    grad_in
        .data_mut()
        .par_chunks_mut(in_hw)
        .enumerate()
        .for_each(|(plane_idx, gi_plane)| {
            let b = plane_idx / shape.channels;
            let c = plane_idx % shape.channels;
            let g_plane = grad_out.plane(b, c);
            for cy in 0..shape.height {
                for cx in 0..shape.width {
                    let mut acc = T::zero();
                    for dy in 0..factor {
                        let g_row = &g_plane[(cy * factor + dy) * gshape.width..];
                        for dx in 0..factor {
                            acc = acc + g_row[cx * factor + dx];
                        }
                    }
                    gi_plane[cy * shape.width + cx] = acc;
                }
            }
        });
    Ok(grad_in)
}
