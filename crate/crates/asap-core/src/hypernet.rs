//! Low-resolution convolutional hypernetwork.
//!
//! The hypernetwork consumes a bilinearly pre-downsampled copy of the input
//! (factor `S_b`, chosen so the short axis is at most `lowres_cap` pixels),
//! reduces it by a further learned factor `S_l` through stride-2 convolution
//! stages, and emits one flattened MLP parameter vector per output cell. The
//! prediction is residual around a learned shared base vector: a zero head
//! leaves every cell at the base, which keeps freshly initialized pixelwise
//! networks sanely scaled.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mlp::MlpSpec;
use crate::rng::{self, SeedRng};
use crate::tensor::{
    conv2d_backward, conv2d_forward, instance_norm, instance_norm_backward, leaky_relu,
    leaky_relu_backward, nearest_upsample, ConvLayerParams, InstanceNormCache, Scalar, Shape,
    Tensor,
};

pub const LEAKY_SLOPE: f64 = 0.2;

/// Architecture hyperparameters of the generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    /// Channels of the network input (semantic classes for one-hot label
    /// maps, 3 for RGB).
    pub input_channels: usize,
    pub mlp_depth: usize,
    pub mlp_width: usize,
    pub out_channels: usize,
    /// Skip the final tanh (regression targets such as depth).
    pub linear_output: bool,
    /// Learned downsampling factor `S_l` implemented by the conv stages.
    pub learned_downsampling: usize,
    /// Maximum pixels on the short axis after bilinear pre-downsampling.
    pub lowres_cap: usize,
    /// Channel widths of the stride-2 stages; truncated or last-repeated to
    /// `log2(S_l)` stages.
    pub hypernet_widths: Vec<usize>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            input_channels: 3,
            mlp_depth: 5,
            mlp_width: 64,
            out_channels: 3,
            linear_output: false,
            learned_downsampling: 16,
            lowres_cap: 256,
            hypernet_widths: vec![64, 128, 256, 512],
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        if self.learned_downsampling < 2 || !self.learned_downsampling.is_power_of_two() {
            return Err(Error::Config(format!(
                "learned downsampling {} must be a power of two >= 2",
                self.learned_downsampling
            )));
        }
        if self.lowres_cap == 0 {
            return Err(Error::Config("lowres cap must be positive".into()));
        }
        if self.hypernet_widths.is_empty() || self.hypernet_widths.contains(&0) {
            return Err(Error::Config("hypernet widths must be positive".into()));
        }
        if self.mlp_depth == 0 || (self.mlp_depth >= 2 && self.mlp_width == 0) {
            return Err(Error::Config("mlp depth/width must be positive".into()));
        }
        Ok(())
    }

    /// Width of stage `i` out of `n`: configured widths, last one repeated
    /// if the stage count exceeds the list.
    pub fn stage_widths(&self) -> Vec<usize> {
        let n = self.learned_downsampling.trailing_zeros() as usize;
        (0..n)
            .map(|i| {
                *self
                    .hypernet_widths
                    .get(i)
                    .unwrap_or_else(|| self.hypernet_widths.last().expect("non-empty"))
            })
            .collect()
    }
}

/// Resolution bookkeeping: bilinear factor, total factor, encoding octaves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Factors {
    /// Bilinear pre-downsampling factor `S_b` (power of two).
    pub bilinear: usize,
    /// Total factor `S = S_b * S_l`; the parameter grid has `1/S` the input
    /// extent and each cell covers an `S x S` pixel block.
    pub total: usize,
    /// `log2(S)`: octaves of the positional encoding.
    pub octaves: usize,
}

/// Derives `(S_b, S, K)` for an image. `S_b` is the smallest power of two
/// bringing the short axis to at most `lowres_cap` pixels; extents must be
/// divisible by the resulting `S`.
pub fn compute_factors(height: usize, width: usize, config: &GeneratorConfig) -> Result<Factors> {
    config.validate()?;
    if height == 0 || width == 0 {
        return Err(Error::Config("image extents must be positive".into()));
    }
    let short = height.min(width);
    let mut bilinear = 1usize;
    while short > config.lowres_cap * bilinear {
        bilinear *= 2;
    }
    let total = bilinear * config.learned_downsampling;
    if height % total != 0 || width % total != 0 {
        return Err(Error::Config(format!(
            "extents {height}x{width} not divisible by total downsampling {total}"
        )));
    }
    Ok(Factors {
        bilinear,
        total,
        octaves: total.trailing_zeros() as usize,
    })
}

/// Low-resolution grid of flattened per-cell MLP parameter vectors.
#[derive(Debug, Clone)]
pub struct ParamGrid<T> {
    pub grid: Tensor<T>,
}

impl<T: Scalar> ParamGrid<T> {
    pub fn new(grid: Tensor<T>, param_count: usize) -> Result<Self> {
        if grid.shape().channels != param_count {
            return Err(Error::Config(format!(
                "parameter grid has {} channels, expected {param_count}",
                grid.shape().channels
            )));
        }
        Ok(ParamGrid { grid })
    }
}

/// Learnable state of the hypernetwork: stride-2 stages, a 1x1 head, and the
/// shared base parameter vector the head output is added to.
#[derive(Debug, Clone)]
pub struct HypernetParams<T> {
    pub stages: Vec<ConvLayerParams<T>>,
    pub head: ConvLayerParams<T>,
    pub base: Vec<T>,
}

fn conv_shape<T: Scalar>(
    out_c: usize,
    in_c: usize,
    k: usize,
    stride: usize,
    padding: usize,
    init_std: f64,
    rng: &mut SeedRng,
) -> ConvLayerParams<T> {
    let mut weights = Tensor::zeros(Shape::new(out_c, in_c, k, k));
    rng::fill_normal(rng, init_std, weights.data_mut());
    ConvLayerParams::new(weights, vec![T::zero(); out_c], stride, padding)
        .expect("static conv configuration")
}

impl<T: Scalar> HypernetParams<T> {
    /// He-initialized stages, a zero head, and a base vector whose MLP
    /// layers are He-scaled so the untrained pixelwise networks neither
    /// explode nor vanish.
    pub fn init(config: &GeneratorConfig, mlp: &MlpSpec, rng: &mut SeedRng) -> Self {
        let widths = config.stage_widths();
        let mut stages = Vec::with_capacity(widths.len());
        let mut in_c = config.input_channels;
        for &out_c in &widths {
            let std = rng::he_std(in_c * 9);
            stages.push(conv_shape(out_c, in_c, 3, 2, 1, std, rng));
            in_c = out_c;
        }
        let head = ConvLayerParams::new(
            Tensor::zeros(Shape::new(mlp.param_count(), in_c, 1, 1)),
            vec![T::zero(); mlp.param_count()],
            1,
            0,
        )
        .expect("static head configuration");

        let mut base = Vec::with_capacity(mlp.param_count());
        for (fan_in, fan_out) in mlp.layer_dims() {
            let std = rng::he_std(fan_in);
            let mut w = vec![T::zero(); fan_in * fan_out];
            rng::fill_normal(rng, std, &mut w);
            base.extend_from_slice(&w);
            base.extend(std::iter::repeat(T::zero()).take(fan_out));
        }
        HypernetParams { stages, head, base }
    }

    pub fn param_count(&self) -> usize {
        self.base.len()
    }

    /// Stable name/slice pairs; gradient and optimizer buffers use the same
    /// order.
    pub fn named_len(&self) -> Vec<(String, usize)> {
        let mut out = Vec::new();
        for (i, s) in self.stages.iter().enumerate() {
            out.push((format!("stage{i}.weight"), s.weights.data().len()));
            out.push((format!("stage{i}.bias"), s.bias.len()));
        }
        out.push(("head.weight".into(), self.head.weights.data().len()));
        out.push(("head.bias".into(), self.head.bias.len()));
        out.push(("base".into(), self.base.len()));
        out
    }

    pub fn slices(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::new();
        for s in &self.stages {
            out.push(s.weights.data());
            out.push(&s.bias);
        }
        out.push(self.head.weights.data());
        out.push(&self.head.bias);
        out.push(&self.base);
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        for s in &mut self.stages {
            out.push(s.weights.data_mut());
            out.push(&mut s.bias);
        }
        out.push(self.head.weights.data_mut());
        out.push(&mut self.head.bias);
        out.push(&mut self.base);
        out
    }
}

/// Everything the backward pass needs from a hypernetwork forward.
#[derive(Debug, Clone)]
pub struct HypernetCache<T> {
    stage_inputs: Vec<Tensor<T>>,
    norm_caches: Vec<Option<InstanceNormCache<T>>>,
    act_inputs: Vec<Option<Tensor<T>>>,
    head_input: Tensor<T>,
}

/// Maps the low-resolution image to the parameter grid. Stages apply
/// conv + instance norm + leaky ReLU, except the last stage which feeds the
/// 1x1 head directly; the head output is added to the broadcast base vector.
pub fn hypernet_forward<T: Scalar>(
    lowres: &Tensor<T>,
    params: &HypernetParams<T>,
) -> Result<(ParamGrid<T>, HypernetCache<T>)> {
    let n = params.stages.len();
    let (h, w) = lowres.shape().spatial();
    let s_learned = 1usize << n;
    if h % s_learned != 0 || w % s_learned != 0 {
        return Err(Error::Config(format!(
            "low-res extents {h}x{w} not divisible by learned downsampling {s_learned}"
        )));
    }

    let mut x = lowres.clone();
    let mut stage_inputs = Vec::with_capacity(n);
    let mut norm_caches = Vec::with_capacity(n);
    let mut act_inputs = Vec::with_capacity(n);
    for (i, stage) in params.stages.iter().enumerate() {
        stage_inputs.push(x.clone());
        let conv_out = conv2d_forward(&x, stage)?;
        if i + 1 < n {
            let (normed, ncache) = instance_norm(&conv_out)?;
            norm_caches.push(Some(ncache));
            act_inputs.push(Some(normed.clone()));
            x = leaky_relu(&normed, LEAKY_SLOPE);
        } else {
            norm_caches.push(None);
            act_inputs.push(None);
            x = conv_out;
        }
    }

    let head_input = x;
    let mut grid = conv2d_forward(&head_input, &params.head)?;
    let gshape = grid.shape();
    let hw = gshape.height * gshape.width;
    for (c, &b) in params.base.iter().enumerate() {
        let start = c * hw;
        for v in &mut grid.data_mut()[start..start + hw] {
            *v = *v + b;
        }
    }

    Ok((
        ParamGrid::new(grid, params.param_count())?,
        HypernetCache {
            stage_inputs,
            norm_caches,
            act_inputs,
            head_input,
        },
    ))
}

/// Gradients for every hypernetwork parameter, in [`HypernetParams`] order.
#[derive(Debug, Clone)]
pub struct HypernetGrads<T> {
    pub stages: Vec<(Tensor<T>, Vec<T>)>,
    pub head: (Tensor<T>, Vec<T>),
    pub base: Vec<T>,
}

impl<T: Scalar> HypernetGrads<T> {
    pub fn slices(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::new();
        for (w, b) in &self.stages {
            out.push(w.data());
            out.push(b);
        }
        out.push(self.head.0.data());
        out.push(&self.head.1);
        out.push(&self.base);
        out
    }
}

pub fn hypernet_backward<T: Scalar>(
    params: &HypernetParams<T>,
    cache: &HypernetCache<T>,
    grad_grid: &Tensor<T>,
) -> Result<(HypernetGrads<T>, Tensor<T>)> {
    let gshape = grad_grid.shape();
    let hw = gshape.height * gshape.width;
    // Base is broadcast over cells, so its gradient is the per-channel sum.
    let mut grad_base = vec![T::zero(); params.base.len()];
    for (c, slot) in grad_base.iter_mut().enumerate() {
        let mut acc = T::zero();
        for &g in &grad_grid.data()[c * hw..(c + 1) * hw] {
            acc = acc + g;
        }
        *slot = acc;
    }

    let head_grads = conv2d_backward(&cache.head_input, &params.head, grad_grid)?;
    let mut g = head_grads.input;
    let mut stage_grads = vec![None; params.stages.len()];
    for i in (0..params.stages.len()).rev() {
        if let (Some(act_in), Some(ncache)) = (&cache.act_inputs[i], &cache.norm_caches[i]) {
            g = leaky_relu_backward(act_in, &g, LEAKY_SLOPE);
            g = instance_norm_backward(ncache, &g)?;
        }
        let grads = conv2d_backward(&cache.stage_inputs[i], &params.stages[i], &g)?;
        stage_grads[i] = Some((grads.weights, grads.bias));
        g = grads.input;
    }

    Ok((
        HypernetGrads {
            stages: stage_grads.into_iter().map(|g| g.expect("filled")).collect(),
            head: (head_grads.weights, head_grads.bias),
            base: grad_base,
        },
        g,
    ))
}

/// Replicates each grid cell's parameter vector over its `S x S` pixel
/// block (the nearest-neighbor indexing `floor(p / S)`).
pub fn upsample_params<T: Scalar>(grid: &ParamGrid<T>, total_factor: usize) -> Result<Tensor<T>> {
    nearest_upsample(&grid.grid, total_factor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn toy_config() -> GeneratorConfig {
        GeneratorConfig {
            input_channels: 3,
            mlp_depth: 2,
            mlp_width: 4,
            out_channels: 3,
            linear_output: false,
            learned_downsampling: 4,
            lowres_cap: 256,
            hypernet_widths: vec![6, 8],
        }
    }

    fn toy_mlp(config: &GeneratorConfig, octaves: usize) -> MlpSpec {
        MlpSpec::new(
            config.mlp_depth,
            config.mlp_width,
            config.input_channels + 4 * octaves,
            config.out_channels,
            config.linear_output,
        )
        .unwrap()
    }

    #[test]
    fn factors_for_square_1024() {
        let f = compute_factors(1024, 1024, &GeneratorConfig::default()).unwrap();
        assert_eq!(f.bilinear, 4);
        assert_eq!(f.total, 64);
        assert_eq!(f.octaves, 6);
    }

    #[test]
    fn factors_for_wide_512x1024() {
        let f = compute_factors(512, 1024, &GeneratorConfig::default()).unwrap();
        assert_eq!(f.bilinear, 2);
        assert_eq!(f.total, 32);
        // Grid is 16x32 for these extents.
        assert_eq!((512 / f.total, 1024 / f.total), (16, 32));
    }

    #[test]
    fn factors_when_no_predownsampling_needed() {
        let f = compute_factors(256, 256, &GeneratorConfig::default()).unwrap();
        assert_eq!(f.bilinear, 1);
        assert_eq!(f.total, 16);
    }

    #[test]
    fn factors_reject_nondivisible_extents() {
        assert!(matches!(
            compute_factors(1000, 1000, &GeneratorConfig::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn zero_head_emits_base_everywhere() {
        let config = toy_config();
        let mlp = toy_mlp(&config, 2);
        let mut rng = crate::rng::seeded(31);
        let params = HypernetParams::<f64>::init(&config, &mlp, &mut rng);
        let lowres = Tensor::from_fn(Shape::new(1, 3, 8, 8), |_, _, y, x| {
            ((y * 8 + x) as f64) / 32.0 - 1.0
        });
        let (grid, _) = hypernet_forward(&lowres, &params).unwrap();
        assert_eq!(grid.grid.shape(), Shape::new(1, mlp.param_count(), 2, 2));
        for (c, &b) in params.base.iter().enumerate() {
            for &v in grid.grid.plane(0, c) {
                assert_eq!(v, b);
            }
        }
    }

    #[test]
    fn base_shift_moves_every_cell_by_delta() {
        let config = toy_config();
        let mlp = toy_mlp(&config, 2);
        let mut rng = crate::rng::seeded(32);
        let mut params = HypernetParams::<f64>::init(&config, &mlp, &mut rng);
        // Give the head nonzero weights so the residual structure is visible.
        rng::fill_normal(&mut rng, 0.1, params.head.weights.data_mut());
        let lowres = Tensor::from_fn(Shape::new(1, 3, 8, 8), |_, c, y, x| {
            ((c + y + x) as f64 * 0.37).sin()
        });
        let (grid_a, _) = hypernet_forward(&lowres, &params).unwrap();
        let delta = 0.625;
        for b in &mut params.base {
            *b += delta;
        }
        let (grid_b, _) = hypernet_forward(&lowres, &params).unwrap();
        for (a, b) in grid_a.grid.data().iter().zip(grid_b.grid.data()) {
            assert!((b - a - delta).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_extents_divide_by_learned_factor() {
        let config = toy_config();
        let mlp = toy_mlp(&config, 2);
        let mut rng = crate::rng::seeded(33);
        let params = HypernetParams::<f64>::init(&config, &mlp, &mut rng);
        let lowres = Tensor::zeros(Shape::new(1, 3, 64, 64));
        let (grid, _) = hypernet_forward(&lowres, &params).unwrap();
        assert_eq!(grid.grid.shape().spatial(), (16, 16));

        let odd = Tensor::<f64>::zeros(Shape::new(1, 3, 6, 6));
        assert!(hypernet_forward(&odd, &params).is_err());
    }

    #[test]
    fn upsample_replicates_cells_into_blocks() {
        let mut rng = crate::rng::seeded(34);
        let grid_t = Tensor::from_fn(Shape::new(1, 5, 2, 2), |_, _, _, _| {
            rng.gen_range(-1.0..1.0)
        });
        let grid = ParamGrid::new(grid_t, 5).unwrap();
        let up = upsample_params(&grid, 2).unwrap();
        #[allow(clippy::needless_range_loop)]
        for c in 0..5 {
            for y in 0..4 {
                for x in 0..4 {
                    assert_eq!(up.get(0, c, y, x), grid.grid.get(0, c, y / 2, x / 2));
                }
            }
        }
    }

    #[test]
    fn single_cell_grid_shares_one_phi() {
        let grid_t = Tensor::<f64>::from_fn(Shape::new(1, 3, 1, 1), |_, c, _, _| c as f64);
        let grid = ParamGrid::new(grid_t, 3).unwrap();
        let up = upsample_params(&grid, 4).unwrap();
        for c in 0..3 {
            assert!(up.plane(0, c).iter().all(|&v| v == c as f64));
        }
    }
}
