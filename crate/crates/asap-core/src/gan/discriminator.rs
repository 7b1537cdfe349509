//! Multi-scale patch discriminator.
//!
//! Each scale is an independent critic over the channel-concatenated
//! (input, output) pair, seen through average pooling by `2^scale`. A scale
//! is a chain of stride-2 4x4 convolutions with leaky ReLU (instance norm on
//! all but the first), closed by a 1x1 conv to a single-channel spatial map
//! of patch logits. Intermediate activations are retained for the feature
//! matching loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypernet::LEAKY_SLOPE;
use crate::rng::{self, SeedRng};
use crate::tensor::{
    bilinear_downsample, bilinear_downsample_backward, conv2d_backward, conv2d_forward,
    instance_norm, instance_norm_backward, leaky_relu, leaky_relu_backward, ConvLayerParams,
    InstanceNormCache, Scalar, Shape, Tensor,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscriminatorConfig {
    pub scales: usize,
    pub layers_per_scale: usize,
    pub base_width: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            scales: 2,
            layers_per_scale: 4,
            base_width: 64,
        }
    }
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scales == 0 || self.layers_per_scale == 0 || self.base_width == 0 {
            return Err(Error::Config(
                "discriminator scales, layers, and width must be positive".into(),
            ));
        }
        Ok(())
    }

    fn stage_widths(&self) -> Vec<usize> {
        (0..self.layers_per_scale)
            .map(|i| (self.base_width << i).min(512))
            .collect()
    }
}

/// One per-scale critic.
#[derive(Debug, Clone)]
pub struct PatchDisc<T> {
    pub stages: Vec<ConvLayerParams<T>>,
    pub head: ConvLayerParams<T>,
}

#[derive(Debug, Clone)]
pub struct DiscriminatorParams<T> {
    pub config: DiscriminatorConfig,
    pub scales: Vec<PatchDisc<T>>,
    pub pair_channels: usize,
}

impl<T: Scalar> DiscriminatorParams<T> {
    /// Conventional GAN initialization: normal(0, 0.02) weights, zero biases.
    pub fn init(config: DiscriminatorConfig, pair_channels: usize, rng: &mut SeedRng) -> Result<Self> {
        config.validate()?;
        if pair_channels == 0 {
            return Err(Error::Config("pair must have at least one channel".into()));
        }
        let widths = config.stage_widths();
        let mut scales = Vec::with_capacity(config.scales);
        for _ in 0..config.scales {
            let mut stages = Vec::with_capacity(widths.len());
            let mut in_c = pair_channels;
            for &out_c in &widths {
                let mut w = Tensor::zeros(Shape::new(out_c, in_c, 4, 4));
                rng::fill_normal(rng, 0.02, w.data_mut());
                stages.push(ConvLayerParams::new(w, vec![T::zero(); out_c], 2, 1)?);
                in_c = out_c;
            }
            let mut hw = Tensor::zeros(Shape::new(1, in_c, 1, 1));
            rng::fill_normal(rng, 0.02, hw.data_mut());
            let head = ConvLayerParams::new(hw, vec![T::zero()], 1, 0)?;
            scales.push(PatchDisc { stages, head });
        }
        Ok(DiscriminatorParams {
            config,
            scales,
            pair_channels,
        })
    }

    pub fn named_len(&self) -> Vec<(String, usize)> {
        let mut out = Vec::new();
        for (s, scale) in self.scales.iter().enumerate() {
            for (i, stage) in scale.stages.iter().enumerate() {
                out.push((format!("s{s}.stage{i}.weight"), stage.weights.data().len()));
                out.push((format!("s{s}.stage{i}.bias"), stage.bias.len()));
            }
            out.push((format!("s{s}.head.weight"), scale.head.weights.data().len()));
            out.push((format!("s{s}.head.bias"), scale.head.bias.len()));
        }
        out
    }

    pub fn slices(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::new();
        for scale in &self.scales {
            for stage in &scale.stages {
                out.push(stage.weights.data());
                out.push(&stage.bias);
            }
            out.push(scale.head.weights.data());
            out.push(&scale.head.bias);
        }
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        for scale in &mut self.scales {
            for stage in &mut scale.stages {
                out.push(stage.weights.data_mut());
                out.push(&mut stage.bias);
            }
            out.push(scale.head.weights.data_mut());
            out.push(&mut scale.head.bias);
        }
        out
    }
}

/// Per-scale logits and intermediate features.
#[derive(Debug, Clone)]
pub struct ScaleOutput<T> {
    pub logits: Tensor<T>,
    pub features: Vec<Tensor<T>>,
}

#[derive(Debug, Clone)]
pub struct DiscOutput<T> {
    pub scales: Vec<ScaleOutput<T>>,
}

impl<T: Scalar> DiscOutput<T> {
    pub fn logits(&self) -> Vec<&Tensor<T>> {
        self.scales.iter().map(|s| &s.logits).collect()
    }

    pub fn features(&self) -> Vec<&Vec<Tensor<T>>> {
        self.scales.iter().map(|s| &s.features).collect()
    }
}

struct ScaleCache<T> {
    pooled_input: Tensor<T>,
    conv_outputs: Vec<Tensor<T>>,
    norm_caches: Vec<Option<InstanceNormCache<T>>>,
    act_inputs: Vec<Tensor<T>>,
    head_input: Tensor<T>,
}

pub struct DiscCache<T> {
    scales: Vec<ScaleCache<T>>,
    pair_shape: Shape,
}

/// Runs every scale on the pair; scale `i` sees the pair average-pooled by
/// `2^i`.
pub fn discriminator_forward<T: Scalar>(
    pair: &Tensor<T>,
    params: &DiscriminatorParams<T>,
) -> Result<(DiscOutput<T>, DiscCache<T>)> {
    if pair.shape().channels != params.pair_channels {
        return Err(Error::Config(format!(
            "pair has {} channels, discriminator expects {}",
            pair.shape().channels,
            params.pair_channels
        )));
    }
    let mut outputs = Vec::with_capacity(params.scales.len());
    let mut caches = Vec::with_capacity(params.scales.len());
    for (s, scale) in params.scales.iter().enumerate() {
        let pooled = bilinear_downsample(pair, 1 << s)?;
        let mut x = pooled.clone();
        let mut features = Vec::with_capacity(scale.stages.len());
        let mut conv_outputs = Vec::new();
        let mut norm_caches = Vec::new();
        let mut act_inputs = Vec::new();
        for (i, stage) in scale.stages.iter().enumerate() {
            let conv_out = conv2d_forward(&x, stage)?;
            conv_outputs.push(x);
            let pre_act = if i == 0 {
                norm_caches.push(None);
                conv_out
            } else {
                let (normed, ncache) = instance_norm(&conv_out)?;
                norm_caches.push(Some(ncache));
                normed
            };
            act_inputs.push(pre_act.clone());
            x = leaky_relu(&pre_act, LEAKY_SLOPE);
            features.push(x.clone());
        }
        let logits = conv2d_forward(&x, &scale.head)?;
        outputs.push(ScaleOutput { logits, features });
        caches.push(ScaleCache {
            pooled_input: pooled,
            conv_outputs,
            norm_caches,
            act_inputs,
            head_input: x,
        });
    }
    Ok((
        DiscOutput { scales: outputs },
        DiscCache {
            scales: caches,
            pair_shape: pair.shape(),
        },
    ))
}

/// Gradients for every discriminator parameter, aligned with
/// [`DiscriminatorParams::slices`].
#[derive(Debug, Clone)]
pub struct DiscGrads<T> {
    pub scales: Vec<(Vec<(Tensor<T>, Vec<T>)>, (Tensor<T>, Vec<T>))>,
}

impl<T: Scalar> DiscGrads<T> {
    pub fn slices(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::new();
        for (stages, head) in &self.scales {
            for (w, b) in stages {
                out.push(w.data());
                out.push(b);
            }
            out.push(head.0.data());
            out.push(&head.1);
        }
        out
    }

    pub fn add(&mut self, other: &DiscGrads<T>) {
        for ((stages, head), (ostages, ohead)) in self.scales.iter_mut().zip(&other.scales) {
            for ((w, b), (ow, ob)) in stages.iter_mut().zip(ostages) {
                for (slot, &v) in w.data_mut().iter_mut().zip(ow.data()) {
                    *slot = *slot + v;
                }
                for (slot, &v) in b.iter_mut().zip(ob) {
                    *slot = *slot + v;
                }
            }
            for (slot, &v) in head.0.data_mut().iter_mut().zip(ohead.0.data()) {
                *slot = *slot + v;
            }
            for (slot, &v) in head.1.iter_mut().zip(&ohead.1) {
                *slot = *slot + v;
            }
        }
    }
}

/// Backward through all scales. `grad_logits` must carry one tensor per
/// scale; `grad_features`, when present, adds upstream gradients on the
/// retained per-stage activations (the feature-matching path). Returns the
/// parameter gradients and the gradient w.r.t. the full-resolution pair.
pub fn discriminator_backward<T: Scalar>(
    params: &DiscriminatorParams<T>,
    cache: &DiscCache<T>,
    grad_logits: &[Tensor<T>],
    grad_features: Option<&[Vec<Tensor<T>>]>,
    ) -> Result<(DiscGrads<T>, Tensor<T>)> {
    if grad_logits.len() != params.scales.len() {
        return Err(Error::Usage(format!(
            "expected {} logit gradients, got {}",
            params.scales.len(),
            grad_logits.len()
        )));
    }
    let mut grad_pair = Tensor::zeros(cache.pair_shape);
    let mut scale_grads = Vec::with_capacity(params.scales.len());
    for (s, (scale, scache)) in params.scales.iter().zip(&cache.scales).enumerate() {
        let head_grads = conv2d_backward(&scache.head_input, &scale.head, &grad_logits[s])?;
        let mut g = head_grads.input;
        let n = scale.stages.len();
        let mut stage_grads: Vec<Option<(Tensor<T>, Vec<T>)>> = vec![None; n];
        for i in (0..n).rev() {
            if let Some(gf) = grad_features {
                // features[i] is the post-activation output of stage i.
                let extra = &gf[s][i];
                for (slot, &v) in g.data_mut().iter_mut().zip(extra.data()) {
                    *slot = *slot + v;
                }
            }
            g = leaky_relu_backward(&scache.act_inputs[i], &g, LEAKY_SLOPE);
            if let Some(ncache) = &scache.norm_caches[i] {
                g = instance_norm_backward(ncache, &g)?;
            }
            let grads = conv2d_backward(&scache.conv_outputs[i], &scale.stages[i], &g)?;
            stage_grads[i] = Some((grads.weights, grads.bias));
            g = grads.input;
        }
        // Back through the average pooling to full resolution.
        let unpooled = bilinear_downsample_backward(&g, 1 << s)?;
        debug_assert_eq!(scache.pooled_input.shape().spatial().0 << s, cache.pair_shape.height);
        for (slot, &v) in grad_pair.data_mut().iter_mut().zip(unpooled.data()) {
            *slot = *slot + v;
        }
        scale_grads.push((
            stage_grads.into_iter().map(|g| g.expect("filled")).collect(),
            (head_grads.weights, head_grads.bias),
        ));
    }
    Ok((
        DiscGrads {
            scales: scale_grads,
        },
        grad_pair,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn toy_config() -> DiscriminatorConfig {
        DiscriminatorConfig {
            scales: 2,
            layers_per_scale: 2,
            base_width: 6,
        }
    }

    #[test]
    fn zero_head_gives_zero_logits() {
        let mut rng = crate::rng::seeded(51);
        let mut params = DiscriminatorParams::<f64>::init(toy_config(), 5, &mut rng).unwrap();
        for scale in &mut params.scales {
            scale.head.weights.data_mut().fill(0.0);
        }
        let pair = Tensor::from_fn(Shape::new(1, 5, 16, 16), |_, _, _, _| rng.gen_range(-1.0..1.0));
        let (out, _) = discriminator_forward(&pair, &params).unwrap();
        for scale in &out.scales {
            assert!(scale.logits.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn logit_map_shape_follows_stride_arithmetic() {
        let mut rng = crate::rng::seeded(52);
        let config = DiscriminatorConfig {
            scales: 1,
            layers_per_scale: 4,
            base_width: 4,
        };
        let params = DiscriminatorParams::<f64>::init(config, 6, &mut rng).unwrap();
        let pair = Tensor::zeros(Shape::new(1, 6, 64, 64));
        let (out, _) = discriminator_forward(&pair, &params).unwrap();
        // Four stride-2 stages: 64 -> 4.
        assert_eq!(out.scales[0].logits.shape(), Shape::new(1, 1, 4, 4));
        assert_eq!(out.scales[0].features.len(), 4);
    }

    #[test]
    fn scales_see_pooled_pairs() {
        let mut rng = crate::rng::seeded(53);
        let params = DiscriminatorParams::<f64>::init(toy_config(), 3, &mut rng).unwrap();
        let pair = Tensor::from_fn(Shape::new(1, 3, 32, 32), |_, _, y, x| {
            ((y * 31 + x) % 17) as f64 / 17.0
        });
        let (out, _) = discriminator_forward(&pair, &params).unwrap();
        // Scale 1 input is half size, so its logit map is half the extent.
        let (h0, _) = out.scales[0].logits.shape().spatial();
        let (h1, _) = out.scales[1].logits.shape().spatial();
        assert_eq!(h0, 2 * h1);
    }

    #[test]
    fn channel_mismatch_rejected() {
        let mut rng = crate::rng::seeded(54);
        let params = DiscriminatorParams::<f64>::init(toy_config(), 4, &mut rng).unwrap();
        let pair = Tensor::<f64>::zeros(Shape::new(1, 3, 16, 16));
        assert!(discriminator_forward(&pair, &params).is_err());
    }
}
