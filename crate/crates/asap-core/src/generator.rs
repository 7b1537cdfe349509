//! End-to-end generator: bilinear pre-downsampling, hypernetwork, parameter
//! upsampling, positional encoding, and pixelwise evaluation, plus the two
//! ablation variants (no positional encoding; spatially-uniform parameters).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypernet::{
    compute_factors, hypernet_backward, hypernet_forward, upsample_params, Factors,
    GeneratorConfig, HypernetCache, HypernetGrads, HypernetParams, ParamGrid,
};
use crate::mlp::{evaluate_image, evaluate_image_backward, MlpSpec};
use crate::posenc::{encode_grid, PositionalEncodingSpec};
use crate::rng::{self, SeedRng};
use crate::tensor::{
    bilinear_downsample, bilinear_downsample_backward, nearest_upsample_backward, Scalar, Shape,
    Tensor,
};

/// Model variants used for ablation comparisons. These are configuration,
/// not code forks: training, inference, and benchmarks accept any of them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    #[default]
    Full,
    /// Drop the sinusoidal coordinate channels (MLP input is the pixel value
    /// alone); with block-constant inputs the output stays block-constant.
    NoPositionalEncoding,
    /// Replace the per-cell parameter grid by a single learned vector
    /// broadcast everywhere, collapsing the model to a static stack of 1x1
    /// convolutions.
    SpatiallyUniform,
}

impl AblationMode {
    pub fn name(&self) -> &'static str {
        match self {
            AblationMode::Full => "full",
            AblationMode::NoPositionalEncoding => "no_positional_encoding",
            AblationMode::SpatiallyUniform => "spatially_uniform",
        }
    }
}

/// Learnable state, depending on the ablation mode.
#[derive(Debug, Clone)]
pub enum GeneratorWeights<T> {
    Adaptive(HypernetParams<T>),
    Uniform(Vec<T>),
}

/// A generator instance resolved against one resolution class (fixed `S`).
#[derive(Debug, Clone)]
pub struct Generator<T> {
    pub config: GeneratorConfig,
    pub mode: AblationMode,
    pub factors: Factors,
    pub mlp: MlpSpec,
    pub weights: GeneratorWeights<T>,
}

/// MLP input dimension for a given octave count: pixel channels plus 4K
/// encoding channels.
pub fn mlp_spec_for(config: &GeneratorConfig, octaves: usize) -> Result<MlpSpec> {
    MlpSpec::new(
        config.mlp_depth,
        config.mlp_width,
        config.input_channels + 4 * octaves,
        config.out_channels,
        config.linear_output,
    )
}

impl<T: Scalar> Generator<T> {
    /// Builds a freshly initialized generator for images of the given
    /// extents (more precisely: for the resolution class sharing their
    /// downsampling factors).
    pub fn init(
        config: GeneratorConfig,
        mode: AblationMode,
        height: usize,
        width: usize,
        rng: &mut SeedRng,
    ) -> Result<Self> {
        let factors = compute_factors(height, width, &config)?;
        let octaves = match mode {
            AblationMode::NoPositionalEncoding => 0,
            _ => factors.octaves,
        };
        let mlp = mlp_spec_for(&config, octaves)?;
        let weights = match mode {
            AblationMode::SpatiallyUniform => {
                // Same He-per-layer scaling the adaptive base uses.
                let mut phi = Vec::with_capacity(mlp.param_count());
                for (fan_in, fan_out) in mlp.layer_dims() {
                    let std = rng::he_std(fan_in);
                    let mut w = vec![T::zero(); fan_in * fan_out];
                    rng::fill_normal(rng, std, &mut w);
                    phi.extend_from_slice(&w);
                    phi.extend(std::iter::repeat(T::zero()).take(fan_out));
                }
                GeneratorWeights::Uniform(phi)
            }
            _ => GeneratorWeights::Adaptive(HypernetParams::init(&config, &mlp, rng)),
        };
        Ok(Generator {
            config,
            mode,
            factors,
            mlp,
            weights,
        })
    }

    pub fn posenc(&self) -> Result<Option<PositionalEncodingSpec>> {
        if self.mode == AblationMode::NoPositionalEncoding {
            Ok(None)
        } else {
            Ok(Some(PositionalEncodingSpec::new(self.factors.total)?))
        }
    }

    pub fn named_len(&self) -> Vec<(String, usize)> {
        match &self.weights {
            GeneratorWeights::Adaptive(h) => h.named_len(),
            GeneratorWeights::Uniform(phi) => vec![("phi".into(), phi.len())],
        }
    }

    pub fn slices(&self) -> Vec<&[T]> {
        match &self.weights {
            GeneratorWeights::Adaptive(h) => h.slices(),
            GeneratorWeights::Uniform(phi) => vec![phi],
        }
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [T]> {
        match &mut self.weights {
            GeneratorWeights::Adaptive(h) => h.slices_mut(),
            GeneratorWeights::Uniform(phi) => vec![phi],
        }
    }

    fn validate_input(&self, input: &Tensor<T>) -> Result<(usize, usize)> {
        let shape = input.shape();
        if shape.batch != 1 {
            return Err(Error::Config("generator expects batch 1".into()));
        }
        if shape.channels != self.config.input_channels {
            return Err(Error::Config(format!(
                "input has {} channels, generator expects {}",
                shape.channels, self.config.input_channels
            )));
        }
        let factors = compute_factors(shape.height, shape.width, &self.config)?;
        if factors != self.factors {
            return Err(Error::Config(format!(
                "input {}x{} implies downsampling {} but this generator was built for {}",
                shape.height, shape.width, factors.total, self.factors.total
            )));
        }
        Ok(shape.spatial())
    }

    fn encoding(&self, height: usize, width: usize) -> Result<Tensor<T>> {
        match self.posenc()? {
            Some(spec) => encode_grid(height, width, &spec),
            None => Ok(Tensor::zeros(Shape::new(1, 0, height, width))),
        }
    }
}

/// Intermediate products of a forward pass, consumed by the backward pass
/// (and by inference-time introspection dumps).
#[derive(Debug, Clone)]
pub struct GenCache<T> {
    pub lowres: Option<Tensor<T>>,
    pub grid: Option<ParamGrid<T>>,
    pub params_full: Tensor<T>,
    pub enc: Tensor<T>,
    hyper: Option<HypernetCache<T>>,
    input_shape: Shape,
}

/// Runs the full pipeline on one image. Deterministic for fixed weights.
pub fn generator_forward<T: Scalar>(
    gen: &Generator<T>,
    input: &Tensor<T>,
) -> Result<(Tensor<T>, GenCache<T>)> {
    let (h, w) = gen.validate_input(input)?;
    let enc = gen.encoding(h, w)?;

    let (params_full, lowres, grid, hyper) = match &gen.weights {
        GeneratorWeights::Adaptive(hp) => {
            let lowres = bilinear_downsample(input, gen.factors.bilinear)?;
            let (grid, hcache) = hypernet_forward(&lowres, hp)?;
            let params_full = upsample_params(&grid, gen.factors.total)?;
            (params_full, Some(lowres), Some(grid), Some(hcache))
        }
        GeneratorWeights::Uniform(phi) => {
            let mut params_full = Tensor::try_zeros(Shape::new(1, phi.len(), h, w))?;
            let hw = h * w;
            for (c, &v) in phi.iter().enumerate() {
                params_full.data_mut()[c * hw..(c + 1) * hw].fill(v);
            }
            (params_full, None, None, None)
        }
    };

    let output = evaluate_image(input, &params_full, &enc, &gen.mlp)?;
    Ok((
        output,
        GenCache {
            lowres,
            grid,
            params_full,
            enc,
            hyper,
            input_shape: input.shape(),
        },
    ))
}

/// Pixelwise evaluation with an externally supplied (frozen) parameter grid,
/// bypassing the hypernetwork.
pub fn generator_forward_with_grid<T: Scalar>(
    gen: &Generator<T>,
    input: &Tensor<T>,
    grid: &ParamGrid<T>,
) -> Result<Tensor<T>> {
    let (h, w) = gen.validate_input(input)?;
    if grid.grid.shape().channels != gen.mlp.param_count() {
        return Err(Error::Config(format!(
            "grid carries {} channels, expected {}",
            grid.grid.shape().channels,
            gen.mlp.param_count()
        )));
    }
    let enc = gen.encoding(h, w)?;
    let params_full = upsample_params(grid, gen.factors.total)?;
    if params_full.shape().spatial() != (h, w) {
        return Err(Error::Config(format!(
            "grid extents {:?} x {} do not cover {h}x{w}",
            grid.grid.shape().spatial(),
            gen.factors.total
        )));
    }
    evaluate_image(input, &params_full, &enc, &gen.mlp)
}

/// Parameter gradients mirroring [`GeneratorWeights`], plus the gradient
/// flowing back into the input image (both streams summed).
#[derive(Debug, Clone)]
pub struct GenGrads<T> {
    pub weights: GeneratorWeightGrads<T>,
    pub input: Tensor<T>,
}

#[derive(Debug, Clone)]
pub enum GeneratorWeightGrads<T> {
    Adaptive(HypernetGrads<T>),
    Uniform(Vec<T>),
}

impl<T: Scalar> GenGrads<T> {
    /// Slices aligned with `Generator::slices()`.
    pub fn slices(&self) -> Vec<&[T]> {
        match &self.weights {
            GeneratorWeightGrads::Adaptive(h) => h.slices(),
            GeneratorWeightGrads::Uniform(phi) => vec![phi],
        }
    }
}

pub fn generator_backward<T: Scalar>(
    gen: &Generator<T>,
    input: &Tensor<T>,
    cache: &GenCache<T>,
    grad_output: &Tensor<T>,
) -> Result<GenGrads<T>> {
    if input.shape() != cache.input_shape {
        return Err(Error::Usage(
            "generator backward: input does not match the cached forward".into(),
        ));
    }
    let img_grads =
        evaluate_image_backward(input, &cache.params_full, &cache.enc, &gen.mlp, grad_output)?;

    match (&gen.weights, &cache.hyper) {
        (GeneratorWeights::Adaptive(hp), Some(hcache)) => {
            let grad_grid = nearest_upsample_backward(&img_grads.params, gen.factors.total)?;
            let (hgrads, grad_lowres) = hypernet_backward(hp, hcache, &grad_grid)?;
            let low_input = bilinear_downsample_backward(&grad_lowres, gen.factors.bilinear)?;
            let mut grad_input = img_grads.input;
            for (slot, &v) in grad_input.data_mut().iter_mut().zip(low_input.data()) {
                *slot = *slot + v;
            }
            Ok(GenGrads {
                weights: GeneratorWeightGrads::Adaptive(hgrads),
                input: grad_input,
            })
        }
        (GeneratorWeights::Uniform(phi), _) => {
            let hw = {
                let s = img_grads.params.shape();
                s.height * s.width
            };
            let mut grad_phi = vec![T::zero(); phi.len()];
            for (c, slot) in grad_phi.iter_mut().enumerate() {
                let mut acc = T::zero();
                for &g in &img_grads.params.data()[c * hw..(c + 1) * hw] {
                    acc = acc + g;
                }
                *slot = acc;
            }
            Ok(GenGrads {
                weights: GeneratorWeightGrads::Uniform(grad_phi),
                input: img_grads.input,
            })
        }
        (GeneratorWeights::Adaptive(_), None) => Err(Error::Usage(
            "generator backward: cache is missing the hypernetwork forward".into(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn toy_config() -> GeneratorConfig {
        GeneratorConfig {
            input_channels: 2,
            mlp_depth: 2,
            mlp_width: 6,
            out_channels: 3,
            linear_output: false,
            learned_downsampling: 4,
            lowres_cap: 256,
            hypernet_widths: vec![8, 8],
        }
    }

    fn rand_input(rng: &mut crate::rng::SeedRng, shape: Shape) -> Tensor<f64> {
        Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn zero_weights_give_tanh_zero_output() {
        let mut rng = crate::rng::seeded(41);
        let mut gen =
            Generator::<f64>::init(toy_config(), AblationMode::Full, 16, 16, &mut rng).unwrap();
        for slice in gen.slices_mut() {
            slice.fill(0.0);
        }
        let input = rand_input(&mut rng, Shape::new(1, 2, 16, 16));
        let (out, _) = generator_forward(&gen, &input).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn frozen_grid_pixel_perturbation_is_local() {
        let mut rng = crate::rng::seeded(42);
        let gen =
            Generator::<f64>::init(toy_config(), AblationMode::Full, 16, 16, &mut rng).unwrap();
        let grid_t = Tensor::from_fn(
            Shape::new(1, gen.mlp.param_count(), 4, 4),
            |_, _, _, _| rng.gen_range(-0.5..0.5),
        );
        let grid = ParamGrid::new(grid_t, gen.mlp.param_count()).unwrap();
        let input = rand_input(&mut rng, Shape::new(1, 2, 16, 16));
        let base = generator_forward_with_grid(&gen, &input, &grid).unwrap();

        let mut poked = input.clone();
        poked.set(0, 0, 7, 9, poked.get(0, 0, 7, 9) + 0.25);
        let out = generator_forward_with_grid(&gen, &poked, &grid).unwrap();

        let mut changed = Vec::new();
        for c in 0..3 {
            for y in 0..16 {
                for x in 0..16 {
                    if out.get(0, c, y, x) != base.get(0, c, y, x) {
                        changed.push((y, x));
                    }
                }
            }
        }
        assert!(!changed.is_empty());
        assert!(changed.iter().all(|&(y, x)| (y, x) == (7, 9)));
    }

    #[test]
    fn no_posenc_block_constant_input_gives_block_constant_output() {
        let mut rng = crate::rng::seeded(43);
        let mut gen = Generator::<f64>::init(
            toy_config(),
            AblationMode::NoPositionalEncoding,
            16,
            16,
            &mut rng,
        )
        .unwrap();
        // Randomize everything so the result is not trivially constant.
        for slice in gen.slices_mut() {
            for v in slice.iter_mut() {
                *v = rng.gen_range(-0.4..0.4);
            }
        }
        let s = gen.factors.total;
        let input = Tensor::from_fn(Shape::new(1, 2, 16, 16), |_, c, y, x| {
            (((y / s) * 31 + (x / s) * 7 + c * 3) % 13) as f64 / 13.0 - 0.5
        });
        let (out, _) = generator_forward(&gen, &input).unwrap();
        for c in 0..3 {
            for y in 0..16 {
                for x in 0..16 {
                    let anchor = out.get(0, c, (y / s) * s, (x / s) * s);
                    assert_eq!(out.get(0, c, y, x), anchor);
                }
            }
        }
    }

    #[test]
    fn full_mode_synthesizes_within_block_detail() {
        let mut rng = crate::rng::seeded(44);
        let mut gen =
            Generator::<f64>::init(toy_config(), AblationMode::Full, 16, 16, &mut rng).unwrap();
        for slice in gen.slices_mut() {
            for v in slice.iter_mut() {
                *v = rng.gen_range(-0.4..0.4);
            }
        }
        let s = gen.factors.total;
        // Block-constant input; only the positional encoding varies inside a
        // block.
        let input = Tensor::from_fn(Shape::new(1, 2, 16, 16), |_, c, y, x| {
            (((y / s) + (x / s) + c) % 3) as f64 * 0.3 - 0.3
        });
        let (out, _) = generator_forward(&gen, &input).unwrap();
        let mut max_within_block_spread: f64 = 0.0;
        for by in 0..(16 / s) {
            for bx in 0..(16 / s) {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for y in by * s..(by + 1) * s {
                    for x in bx * s..(bx + 1) * s {
                        let v = out.get(0, 0, y, x);
                        lo = lo.min(v);
                        hi = hi.max(v);
                    }
                }
                max_within_block_spread = max_within_block_spread.max(hi - lo);
            }
        }
        assert!(
            max_within_block_spread > 0.0,
            "expected at least one block with interior variation"
        );
    }

    #[test]
    fn uniform_mode_matches_mode_definition() {
        let mut rng = crate::rng::seeded(45);
        let gen =
            Generator::<f64>::init(toy_config(), AblationMode::SpatiallyUniform, 16, 16, &mut rng)
                .unwrap();
        let input = rand_input(&mut rng, Shape::new(1, 2, 16, 16));
        let (out, cache) = generator_forward(&gen, &input).unwrap();
        // Every pixel's parameter column equals the shared phi.
        let phi = match &gen.weights {
            GeneratorWeights::Uniform(phi) => phi.clone(),
            _ => unreachable!(),
        };
        for (c, want) in phi.iter().enumerate() {
            assert!(cache.params_full.plane(0, c).iter().all(|v| v == want));
        }
        assert!(out.all_finite());
    }

    #[test]
    fn shifting_input_by_one_cell_shifts_the_parameter_field() {
        // A localized bump on a constant background, moved by exactly one
        // grid cell; interior cells must see a shifted copy of phi.
        let config = GeneratorConfig {
            input_channels: 1,
            mlp_depth: 2,
            mlp_width: 4,
            out_channels: 1,
            linear_output: false,
            learned_downsampling: 4,
            lowres_cap: 256,
            hypernet_widths: vec![6, 6],
        };
        let mut rng = crate::rng::seeded(46);
        let mut gen =
            Generator::<f64>::init(config, AblationMode::Full, 32, 32, &mut rng).unwrap();
        if let GeneratorWeights::Adaptive(hp) = &mut gen.weights {
            crate::rng::fill_normal(&mut rng, 0.05, hp.head.weights.data_mut());
        }
        let s = gen.factors.total;
        assert_eq!(s, 4);
        let bump = |cy: f64, cx: f64, y: usize, x: usize| {
            let (dy, dx) = (y as f64 - cy, x as f64 - cx);
            0.1 + 0.8 * (-(dy * dy + dx * dx) / 4.0).exp()
        };
        let input_a = Tensor::from_fn(Shape::new(1, 1, 32, 32), |_, _, y, x| {
            bump(14.0, 14.0, y, x)
        });
        let input_b = Tensor::from_fn(Shape::new(1, 1, 32, 32), |_, _, y, x| {
            bump(14.0, 18.0, y, x)
        });
        let (_, cache_a) = generator_forward(&gen, &input_a).unwrap();
        let (_, cache_b) = generator_forward(&gen, &input_b).unwrap();
        let grid_a = &cache_a.grid.as_ref().unwrap().grid;
        let grid_b = &cache_b.grid.as_ref().unwrap().grid;
        // Interior cells only (boundary cells see the zero padding).
        let cells = 32 / s;
        for c in 0..gen.mlp.param_count() {
            for gy in 1..cells - 1 {
                for gx in 2..cells - 1 {
                    let a = grid_a.get(0, c, gy, gx - 1);
                    let b = grid_b.get(0, c, gy, gx);
                    assert!(
                        (a - b).abs() < 1e-9,
                        "cell ({gy},{gx}) channel {c}: {a} vs {b}"
                    );
                }
            }
        }
    }

    #[test]
    fn zero_grad_output_gives_zero_grads() {
        let mut rng = crate::rng::seeded(47);
        let gen =
            Generator::<f64>::init(toy_config(), AblationMode::Full, 16, 16, &mut rng).unwrap();
        let input = rand_input(&mut rng, Shape::new(1, 2, 16, 16));
        let (out, cache) = generator_forward(&gen, &input).unwrap();
        let grad_out = Tensor::zeros(out.shape());
        let grads = generator_backward(&gen, &input, &cache, &grad_out).unwrap();
        for slice in grads.slices() {
            assert!(slice.iter().all(|&v| v == 0.0));
        }
        assert!(grads.input.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn upsample_adjoint_accumulates_blocks() {
        // Uniform gradient over one S x S block lands on a single grid cell
        // scaled by S^2 through the replication adjoint.
        let g = Tensor::<f64>::from_fn(Shape::new(1, 1, 8, 8), |_, _, y, x| {
            if y < 4 && x < 4 {
                0.25
            } else {
                0.0
            }
        });
        let back = nearest_upsample_backward(&g, 4).unwrap();
        assert_eq!(back.get(0, 0, 0, 0), 0.25 * 16.0);
        assert_eq!(back.get(0, 0, 0, 1), 0.0);
        assert_eq!(back.get(0, 0, 1, 0), 0.0);
    }
}
