//! Pixelwise MLPs with externally supplied, spatially-varying parameters.
//!
//! One MLP architecture is shared by every pixel; what varies is the
//! flattened parameter vector phi attached to each pixel. The scalar entry
//! points ([`mlp_forward`], [`mlp_backward`]) run one pixel at a time and
//! define the semantics; [`evaluate_image`] applies the same network at every
//! pixel of an image, restructured into plane-wise multiply-accumulates so it
//! streams channel-major memory instead of gathering per-pixel columns.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// Shared architecture of the pixelwise networks.
///
/// `depth` counts affine layers; hidden layers use ReLU and the final layer
/// applies tanh unless `linear_output` is set (regression targets need the
/// unbounded range).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MlpSpec {
    pub depth: usize,
    pub width: usize,
    pub in_dim: usize,
    pub out_dim: usize,
    pub linear_output: bool,
}

impl MlpSpec {
    pub fn new(
        depth: usize,
        width: usize,
        in_dim: usize,
        out_dim: usize,
        linear_output: bool,
    ) -> Result<Self> {
        if depth == 0 || in_dim == 0 || out_dim == 0 || (depth >= 2 && width == 0) {
            return Err(Error::Config(format!(
                "mlp dimensions must be positive (depth {depth}, width {width}, in {in_dim}, out {out_dim})"
            )));
        }
        Ok(MlpSpec {
            depth,
            width,
            in_dim,
            out_dim,
            linear_output,
        })
    }

    /// (fan_in, fan_out) of every affine layer in order.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        if self.depth == 1 {
            return vec![(self.in_dim, self.out_dim)];
        }
        let mut dims = Vec::with_capacity(self.depth);
        dims.push((self.in_dim, self.width));
        for _ in 0..self.depth - 2 {
            dims.push((self.width, self.width));
        }
        dims.push((self.width, self.out_dim));
        dims
    }

    /// Total length of the flattened parameter vector phi.
    pub fn param_count(&self) -> usize {
        self.layer_dims()
            .iter()
            .map(|(fan_in, fan_out)| fan_in * fan_out + fan_out)
            .sum()
    }
}

/// Borrowed view of one unpacked layer: weights are row-major with the
/// output unit outermost, followed by the bias.
#[derive(Debug, Clone, Copy)]
pub struct LayerView<'a, T> {
    pub weights: &'a [T],
    pub bias: &'a [T],
    pub in_dim: usize,
    pub out_dim: usize,
}

/// Splits phi into per-layer weight/bias views. Pure reinterpretation:
/// `pack_params` is its exact inverse.
pub fn unpack_params<'a, T: Scalar>(phi: &'a [T], spec: &MlpSpec) -> Result<Vec<LayerView<'a, T>>> {
    if phi.len() != spec.param_count() {
        return Err(Error::Config(format!(
            "phi length {} does not match param_count {}",
            phi.len(),
            spec.param_count()
        )));
    }
    let mut layers = Vec::with_capacity(spec.depth);
    let mut rest = phi;
    for (fan_in, fan_out) in spec.layer_dims() {
        let (weights, r) = rest.split_at(fan_in * fan_out);
        let (bias, r) = r.split_at(fan_out);
        rest = r;
        layers.push(LayerView {
            weights,
            bias,
            in_dim: fan_in,
            out_dim: fan_out,
        });
    }
    Ok(layers)
}

/// Flattens `(weights, bias)` pairs back into phi.
pub fn pack_params<T: Scalar>(layers: &[(Vec<T>, Vec<T>)], spec: &MlpSpec) -> Result<Vec<T>> {
    let dims = spec.layer_dims();
    if layers.len() != dims.len() {
        return Err(Error::Config(format!(
            "expected {} layers, got {}",
            dims.len(),
            layers.len()
        )));
    }
    let mut phi = Vec::with_capacity(spec.param_count());
    for ((w, b), (fan_in, fan_out)) in layers.iter().zip(dims) {
        if w.len() != fan_in * fan_out || b.len() != fan_out {
            return Err(Error::Config(format!(
                "layer sizes {}/{} do not match dims {fan_in}x{fan_out}",
                w.len(),
                b.len()
            )));
        }
        phi.extend_from_slice(w);
        phi.extend_from_slice(b);
    }
    Ok(phi)
}

/// Runs the MLP on a single input vector.
pub fn mlp_forward<T: Scalar>(x: &[T], phi: &[T], spec: &MlpSpec) -> Result<Vec<T>> {
    if x.len() != spec.in_dim {
        return Err(Error::Config(format!(
            "input length {} does not match in_dim {}",
            x.len(),
            spec.in_dim
        )));
    }
    let layers = unpack_params(phi, spec)?;
    let mut h = x.to_vec();
    for (idx, layer) in layers.iter().enumerate() {
        let mut next = Vec::with_capacity(layer.out_dim);
        for j in 0..layer.out_dim {
            let row = &layer.weights[j * layer.in_dim..(j + 1) * layer.in_dim];
            let mut acc = layer.bias[j];
            for (w, v) in row.iter().zip(&h) {
                acc = acc + *w * *v;
            }
            next.push(acc);
        }
        let last = idx + 1 == spec.depth;
        if !last {
            for v in &mut next {
                if *v < T::zero() {
                    *v = T::zero();
                }
            }
        } else if !spec.linear_output {
            for v in &mut next {
                *v = v.tanh();
            }
        }
        h = next;
    }
    Ok(h)
}

/// Exact gradients of [`mlp_forward`] w.r.t. the input and phi.
/// ReLU takes subgradient 0 at 0.
pub fn mlp_backward<T: Scalar>(
    x: &[T],
    phi: &[T],
    spec: &MlpSpec,
    grad_out: &[T],
) -> Result<(Vec<T>, Vec<T>)> {
    if grad_out.len() != spec.out_dim {
        return Err(Error::Config(format!(
            "grad_out length {} does not match out_dim {}",
            grad_out.len(),
            spec.out_dim
        )));
    }
    let layers = unpack_params(phi, spec)?;

    // Forward, keeping post-activation values of every layer.
    let mut acts: Vec<Vec<T>> = Vec::with_capacity(spec.depth + 1);
    acts.push(x.to_vec());
    if x.len() != spec.in_dim {
        return Err(Error::Config(format!(
            "input length {} does not match in_dim {}",
            x.len(),
            spec.in_dim
        )));
    }
    for (idx, layer) in layers.iter().enumerate() {
        let h = &acts[idx];
        let mut next = Vec::with_capacity(layer.out_dim);
        for j in 0..layer.out_dim {
            let row = &layer.weights[j * layer.in_dim..(j + 1) * layer.in_dim];
            let mut acc = layer.bias[j];
            for (w, v) in row.iter().zip(h) {
                acc = acc + *w * *v;
            }
            next.push(acc);
        }
        let last = idx + 1 == spec.depth;
        if !last {
            for v in &mut next {
                if *v < T::zero() {
                    *v = T::zero();
                }
            }
        } else if !spec.linear_output {
            for v in &mut next {
                *v = v.tanh();
            }
        }
        acts.push(next);
    }

    let mut grad_phi = vec![T::zero(); phi.len()];
    // Delta at the output, through the final nonlinearity.
    let mut delta: Vec<T> = if spec.linear_output {
        grad_out.to_vec()
    } else {
        acts[spec.depth]
            .iter()
            .zip(grad_out)
            .map(|(&y, &g)| g * (T::one() - y * y))
            .collect()
    };

    // Walk layers backwards; phi layout is layer-major so track offsets.
    let mut offsets = Vec::with_capacity(spec.depth);
    let mut off = 0;
    for (fan_in, fan_out) in spec.layer_dims() {
        offsets.push(off);
        off += fan_in * fan_out + fan_out;
    }

    for idx in (0..spec.depth).rev() {
        let layer = &layers[idx];
        let h_prev = &acts[idx];
        let base = offsets[idx];
        let wsize = layer.in_dim * layer.out_dim;
        for j in 0..layer.out_dim {
            let dj = delta[j];
            let row = base + j * layer.in_dim;
            for i in 0..layer.in_dim {
                grad_phi[row + i] = dj * h_prev[i];
            }
            grad_phi[base + wsize + j] = dj;
        }
        let mut prev_delta = vec![T::zero(); layer.in_dim];
        for (i, pd) in prev_delta.iter_mut().enumerate() {
            let mut acc = T::zero();
            for j in 0..layer.out_dim {
                acc = acc + layer.weights[j * layer.in_dim + i] * delta[j];
            }
            *pd = acc;
        }
        if idx > 0 {
            // Through the ReLU of the previous hidden layer.
            for (pd, &h) in prev_delta.iter_mut().zip(h_prev) {
                if h <= T::zero() {
                    *pd = T::zero();
                }
            }
        }
        delta = prev_delta;
    }

    Ok((delta, grad_phi))
}

fn validate_image_args<T: Scalar>(
    input: &Tensor<T>,
    params: &Tensor<T>,
    enc: &Tensor<T>,
    spec: &MlpSpec,
) -> Result<(usize, usize)> {
    let (h, w) = input.shape().spatial();
    if input.shape().batch != 1 || params.shape().batch != 1 || enc.shape().batch != 1 {
        return Err(Error::Config("pixelwise evaluation expects batch 1".into()));
    }
    if params.shape().spatial() != (h, w) || (enc.shape().channels > 0 && enc.shape().spatial() != (h, w))
    {
        return Err(Error::Config(format!(
            "spatial extents disagree: input {}, params {}, encoding {}",
            input.shape(),
            params.shape(),
            enc.shape()
        )));
    }
    if input.shape().channels + enc.shape().channels != spec.in_dim {
        return Err(Error::Config(format!(
            "input {} + encoding {} channels do not match in_dim {}",
            input.shape().channels,
            enc.shape().channels,
            spec.in_dim
        )));
    }
    if params.shape().channels != spec.param_count() {
        return Err(Error::Config(format!(
            "params carry {} channels but param_count is {}",
            params.shape().channels,
            spec.param_count()
        )));
    }
    Ok((h, w))
}

/// Stacks input and encoding planes into one contiguous `in_dim * hw` buffer.
fn stack_inputs<T: Scalar>(input: &Tensor<T>, enc: &Tensor<T>, hw: usize) -> Vec<T> {
    let c_in = input.shape().channels;
    let c_enc = enc.shape().channels;
    let mut h0 = Vec::with_capacity((c_in + c_enc) * hw);
    for c in 0..c_in {
        h0.extend_from_slice(input.plane(0, c));
    }
    for c in 0..c_enc {
        h0.extend_from_slice(enc.plane(0, c));
    }
    h0
}

/// Runs one plane-wise affine layer: for every output unit j,
/// `out_j = bias_j + sum_i w_ji * h_i`, where weights and biases are read
/// from per-pixel parameter planes.
fn layer_forward_planes<T: Scalar>(
    params: &Tensor<T>,
    base: usize,
    din: usize,
    dout: usize,
    prev: &[T],
    hw: usize,
    activation: Activation,
) -> Vec<T> {
    let mut next = vec![T::zero(); dout * hw];
    next.par_chunks_mut(hw).enumerate().for_each(|(j, plane)| {
        plane.copy_from_slice(params.plane(0, base + dout * din + j));
        for i in 0..din {
            let wpl = params.plane(0, base + j * din + i);
            let hpl = &prev[i * hw..(i + 1) * hw];
            for ((slot, &wv), &hv) in plane.iter_mut().zip(wpl).zip(hpl) {
                *slot = *slot + wv * hv;
            }
        }
        match activation {
            Activation::Relu => {
                for v in plane.iter_mut() {
                    if *v < T::zero() {
                        *v = T::zero();
                    }
                }
            }
            Activation::Tanh => {
                for v in plane.iter_mut() {
                    *v = v.tanh();
                }
            }
            Activation::Linear => {}
        }
    });
    next
}

#[derive(Clone, Copy)]
enum Activation {
    Relu,
    Tanh,
    Linear,
}

fn final_activation(spec: &MlpSpec) -> Activation {
    if spec.linear_output {
        Activation::Linear
    } else {
        Activation::Tanh
    }
}

/// Applies the pixelwise MLP at every pixel: output at p equals
/// `mlp_forward(input_p ++ enc_p, params_p)`. Pixels are independent; the
/// result is bitwise identical for any worker count.
pub fn evaluate_image<T: Scalar>(
    input: &Tensor<T>,
    params: &Tensor<T>,
    enc: &Tensor<T>,
    spec: &MlpSpec,
) -> Result<Tensor<T>> {
    let (h, w) = validate_image_args(input, params, enc, spec)?;
    let hw = h * w;
    let mut planes = stack_inputs(input, enc, hw);
    let mut base = 0;
    let dims = spec.layer_dims();
    for (idx, &(din, dout)) in dims.iter().enumerate() {
        let act = if idx + 1 == dims.len() {
            final_activation(spec)
        } else {
            Activation::Relu
        };
        planes = layer_forward_planes(params, base, din, dout, &planes, hw, act);
        base += din * dout + dout;
    }
    Tensor::from_vec(Shape::new(1, spec.out_dim, h, w), planes)
}

/// Gradients of [`evaluate_image`] w.r.t. all three tensor arguments.
#[derive(Debug, Clone)]
pub struct ImageGrads<T> {
    pub input: Tensor<T>,
    pub params: Tensor<T>,
    pub enc: Tensor<T>,
}

pub fn evaluate_image_backward<T: Scalar>(
    input: &Tensor<T>,
    params: &Tensor<T>,
    enc: &Tensor<T>,
    spec: &MlpSpec,
    grad_out: &Tensor<T>,
) -> Result<ImageGrads<T>> {
    let (h, w) = validate_image_args(input, params, enc, spec)?;
    if grad_out.shape() != Shape::new(1, spec.out_dim, h, w) {
        return Err(Error::Config(format!(
            "grad_out shape {} does not match output (1, {}, {h}, {w})",
            grad_out.shape(),
            spec.out_dim
        )));
    }
    let hw = h * w;
    let dims = spec.layer_dims();

    // Recompute the forward pass, keeping post-activation planes per layer.
    let mut acts: Vec<Vec<T>> = Vec::with_capacity(dims.len() + 1);
    acts.push(stack_inputs(input, enc, hw));
    let mut base = 0;
    for (idx, &(din, dout)) in dims.iter().enumerate() {
        let act = if idx + 1 == dims.len() {
            final_activation(spec)
        } else {
            Activation::Relu
        };
        let next = layer_forward_planes(params, base, din, dout, &acts[idx], hw, act);
        acts.push(next);
        base += din * dout + dout;
    }

    let mut layer_bases = Vec::with_capacity(dims.len());
    let mut off = 0;
    for &(din, dout) in &dims {
        layer_bases.push(off);
        off += din * dout + dout;
    }

    // Delta through the output nonlinearity.
    let mut delta: Vec<T> = match final_activation(spec) {
        Activation::Linear => grad_out.data().to_vec(),
        Activation::Tanh => acts[dims.len()]
            .iter()
            .zip(grad_out.data())
            .map(|(&y, &g)| g * (T::one() - y * y))
            .collect(),
        Activation::Relu => unreachable!(),
    };

    let mut grad_params = Tensor::zeros(params.shape());
    for idx in (0..dims.len()).rev() {
        let (din, dout) = dims[idx];
        let pbase = layer_bases[idx];
        let h_prev = &acts[idx];

        // Parameter gradients for this layer live in a contiguous channel
        // range of the gradient tensor.
        let span = din * dout + dout;
        let gp = &mut grad_params.data_mut()[pbase * hw..(pbase + span) * hw];
        gp.par_chunks_mut(hw).enumerate().for_each(|(ch, plane)| {
            if ch < din * dout {
                let j = ch / din;
                let i = ch % din;
                let dpl = &delta[j * hw..(j + 1) * hw];
                let hpl = &h_prev[i * hw..(i + 1) * hw];
                for ((slot, &d), &hv) in plane.iter_mut().zip(dpl).zip(hpl) {
                    *slot = d * hv;
                }
            } else {
                let j = ch - din * dout;
                plane.copy_from_slice(&delta[j * hw..(j + 1) * hw]);
            }
        });

        // Delta for the previous layer.
        let mut prev_delta = vec![T::zero(); din * hw];
        prev_delta
            .par_chunks_mut(hw)
            .enumerate()
            .for_each(|(i, plane)| {
                for j in 0..dout {
                    let wpl = params.plane(0, pbase + j * din + i);
                    let dpl = &delta[j * hw..(j + 1) * hw];
                    for ((slot, &wv), &d) in plane.iter_mut().zip(wpl).zip(dpl) {
                        *slot = *slot + wv * d;
                    }
                }
                if idx > 0 {
                    let hpl = &h_prev[i * hw..(i + 1) * hw];
                    for (slot, &hv) in plane.iter_mut().zip(hpl) {
                        if hv <= T::zero() {
                            *slot = T::zero();
                        }
                    }
                }
            });
        delta = prev_delta;
    }

    // Split the input delta back into image and encoding gradients.
    let c_in = input.shape().channels;
    let c_enc = enc.shape().channels;
    let grad_input = Tensor::from_vec(input.shape(), delta[..c_in * hw].to_vec())?;
    let grad_enc = Tensor::from_vec(
        Shape::new(1, c_enc, h, w),
        delta[c_in * hw..(c_in + c_enc) * hw].to_vec(),
    )?;
    Ok(ImageGrads {
        input: grad_input,
        params: grad_params,
        enc: grad_enc,
    })
}
