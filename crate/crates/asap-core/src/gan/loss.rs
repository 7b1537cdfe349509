//! GAN objectives: hinge adversarial losses, discriminator feature
//! matching, and the direct reconstruction term.
//!
//! Per-scale quantities are averaged within each scale first and then across
//! scales, so scales with larger logit maps do not dominate.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

fn mean<T: Scalar>(t: &Tensor<T>, f: impl Fn(T) -> T) -> T {
    let n = T::from_f64(t.data().len() as f64);
    t.data().iter().map(|&v| f(v)).sum::<T>() / n
}

/// Discriminator hinge loss:
/// mean over scales of mean(max(0, 1 - real)) + mean(max(0, 1 + fake)).
/// Non-negative; zero exactly when all real logits >= 1 and fake <= -1.
pub fn hinge_d_loss<T: Scalar>(real_logits: &[&Tensor<T>], fake_logits: &[&Tensor<T>]) -> T {
    assert_eq!(real_logits.len(), fake_logits.len());
    let scales = T::from_f64(real_logits.len() as f64);
    let one = T::one();
    let mut total = T::zero();
    for (r, f) in real_logits.iter().zip(fake_logits) {
        let lr = mean(r, |v| (one - v).max(T::zero()));
        let lf = mean(f, |v| (one + v).max(T::zero()));
        total = total + lr + lf;
    }
    total / scales
}

/// Gradients of [`hinge_d_loss`] w.r.t. the real and fake logit maps.
pub fn hinge_d_grads<T: Scalar>(
    real_logits: &[&Tensor<T>],
    fake_logits: &[&Tensor<T>],
) -> (Vec<Tensor<T>>, Vec<Tensor<T>>) {
    let scales = real_logits.len() as f64;
    let one = T::one();
    let real = real_logits
        .iter()
        .map(|r| {
            let w = T::from_f64(1.0 / (scales * r.data().len() as f64));
            r.map(|v| if v < one { -w } else { T::zero() })
        })
        .collect();
    let fake = fake_logits
        .iter()
        .map(|f| {
            let w = T::from_f64(1.0 / (scales * f.data().len() as f64));
            f.map(|v| if v > -one { w } else { T::zero() })
        })
        .collect();
    (real, fake)
}

/// Generator hinge loss: mean over scales of -mean(fake logits).
pub fn hinge_g_loss<T: Scalar>(fake_logits: &[&Tensor<T>]) -> T {
    let scales = T::from_f64(fake_logits.len() as f64);
    let mut total = T::zero();
    for f in fake_logits {
        total = total - mean(f, |v| v);
    }
    total / scales
}

pub fn hinge_g_grads<T: Scalar>(fake_logits: &[&Tensor<T>]) -> Vec<Tensor<T>> {
    let scales = fake_logits.len() as f64;
    fake_logits
        .iter()
        .map(|f| {
            let w = T::from_f64(-1.0 / (scales * f.data().len() as f64));
            Tensor::filled(f.shape(), w)
        })
        .collect()
}

/// L1 distance between real and fake discriminator features, averaged over
/// elements, layers, and scales, scaled by `lambda`.
pub fn feature_matching_loss<T: Scalar>(
    real_features: &[&Vec<Tensor<T>>],
    fake_features: &[&Vec<Tensor<T>>],
    lambda: f64,
) -> Result<T> {
    if real_features.len() != fake_features.len() {
        return Err(Error::Usage(
            "feature matching: scale counts differ".into(),
        ));
    }
    let mut total = T::zero();
    for (rs, fs) in real_features.iter().zip(fake_features) {
        if rs.len() != fs.len() {
            return Err(Error::Usage("feature matching: layer counts differ".into()));
        }
        let mut scale_acc = T::zero();
        for (r, f) in rs.iter().zip(fs.iter()) {
            if r.shape() != f.shape() {
                return Err(Error::Usage(format!(
                    "feature matching: feature shapes differ ({} vs {})",
                    r.shape(),
                    f.shape()
                )));
            }
            let n = T::from_f64(r.data().len() as f64);
            let l1 = r
                .data()
                .iter()
                .zip(f.data())
                .map(|(&a, &b)| (a - b).abs())
                .sum::<T>()
                / n;
            scale_acc = scale_acc + l1;
        }
        total = total + scale_acc / T::from_f64(rs.len() as f64);
    }
    Ok(total / T::from_f64(real_features.len() as f64) * T::from_f64(lambda))
}

/// Gradients of [`feature_matching_loss`] w.r.t. the *fake* features (real
/// features are treated as constants).
pub fn feature_matching_grads<T: Scalar>(
    real_features: &[&Vec<Tensor<T>>],
    fake_features: &[&Vec<Tensor<T>>],
    lambda: f64,
) -> Result<Vec<Vec<Tensor<T>>>> {
    if real_features.len() != fake_features.len() {
        return Err(Error::Usage("feature matching: scale counts differ".into()));
    }
    let scales = real_features.len() as f64;
    let mut out = Vec::with_capacity(fake_features.len());
    for (rs, fs) in real_features.iter().zip(fake_features) {
        if rs.len() != fs.len() {
            return Err(Error::Usage("feature matching: layer counts differ".into()));
        }
        let layers = rs.len() as f64;
        let mut grads = Vec::with_capacity(fs.len());
        for (r, f) in rs.iter().zip(fs.iter()) {
            let w = T::from_f64(lambda / (scales * layers * r.data().len() as f64));
            let data = r
                .data()
                .iter()
                .zip(f.data())
                .map(|(&a, &b)| {
                    // d|b - a|/db, subgradient 0 at equality.
                    if b > a {
                        w
                    } else if b < a {
                        -w
                    } else {
                        T::zero()
                    }
                })
                .collect();
            grads.push(Tensor::from_vec(f.shape(), data).expect("shape preserved"));
        }
        out.push(grads);
    }
    Ok(out)
}

/// Mean absolute error scaled by `lambda` (0 disables the term). Stands in
/// for a pretrained-feature perceptual loss at this scale.
pub fn reconstruction_loss<T: Scalar>(
    output: &Tensor<T>,
    target: &Tensor<T>,
    lambda: f64,
) -> Result<T> {
    if output.shape() != target.shape() {
        return Err(Error::Config(format!(
            "reconstruction: shapes differ ({} vs {})",
            output.shape(),
            target.shape()
        )));
    }
    let n = T::from_f64(output.data().len() as f64);
    let l1 = output
        .data()
        .iter()
        .zip(target.data())
        .map(|(&o, &t)| (o - t).abs())
        .sum::<T>()
        / n;
    Ok(l1 * T::from_f64(lambda))
}

pub fn reconstruction_grads<T: Scalar>(
    output: &Tensor<T>,
    target: &Tensor<T>,
    lambda: f64,
) -> Result<Tensor<T>> {
    if output.shape() != target.shape() {
        return Err(Error::Config(format!(
            "reconstruction: shapes differ ({} vs {})",
            output.shape(),
            target.shape()
        )));
    }
    let w = T::from_f64(lambda / output.data().len() as f64);
    let data = output
        .data()
        .iter()
        .zip(target.data())
        .map(|(&o, &t)| {
            if o > t {
                w
            } else if o < t {
                -w
            } else {
                T::zero()
            }
        })
        .collect();
    Tensor::from_vec(output.shape(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;
    use rand::Rng;

    fn filled(v: f64) -> Tensor<f64> {
        Tensor::filled(Shape::new(1, 1, 2, 3), v)
    }

    #[test]
    fn hinge_d_zero_when_margins_satisfied() {
        let r = filled(1.0);
        let f = filled(-1.0);
        assert_eq!(hinge_d_loss(&[&r], &[&f]), 0.0);
        let r = filled(2.0);
        let f = filled(-3.0);
        assert_eq!(hinge_d_loss(&[&r], &[&f]), 0.0);
    }

    #[test]
    fn hinge_d_at_zero_logits_is_two() {
        let r = filled(0.0);
        let f = filled(0.0);
        assert_eq!(hinge_d_loss(&[&r, &r], &[&f, &f]), 2.0);
    }

    #[test]
    fn hinge_d_is_nonnegative() {
        let mut rng = crate::rng::seeded(61);
        for _ in 0..50 {
            let r = Tensor::from_fn(Shape::new(1, 1, 3, 3), |_, _, _, _| rng.gen_range(-3.0..3.0));
            let f = Tensor::from_fn(Shape::new(1, 1, 3, 3), |_, _, _, _| rng.gen_range(-3.0..3.0));
            assert!(hinge_d_loss(&[&r], &[&f]) >= 0.0);
        }
    }

    #[test]
    fn hinge_g_examples() {
        let z = filled(0.0);
        assert_eq!(hinge_g_loss(&[&z]), 0.0);
        let one = filled(1.0);
        assert_eq!(hinge_g_loss(&[&one]), -1.0);
        let mixed = Tensor::from_vec(
            Shape::new(1, 1, 1, 2),
            vec![2.0, -2.0],
        )
        .unwrap();
        assert_eq!(hinge_g_loss(&[&mixed]), 0.0);
    }

    #[test]
    fn feature_matching_examples() {
        let a = vec![filled(0.5), filled(-0.25)];
        let same = vec![a.clone()];
        let loss = feature_matching_loss(&[&a], &[&same[0]], 10.0).unwrap();
        assert_eq!(loss, 0.0);

        let shifted: Vec<Tensor<f64>> = a.iter().map(|t| t.map(|v| v + 0.125)).collect();
        let loss = feature_matching_loss(&[&a], &[&shifted], 10.0).unwrap();
        assert!((loss - 10.0 * 0.125).abs() < 1e-12);
    }

    #[test]
    fn feature_matching_matches_direct_evaluation() {
        let mut rng = crate::rng::seeded(62);
        let mk = |rng: &mut crate::rng::SeedRng, shape: Shape| {
            Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(-1.0..1.0))
        };
        let real = vec![
            mk(&mut rng, Shape::new(1, 2, 4, 4)),
            mk(&mut rng, Shape::new(1, 3, 2, 2)),
        ];
        let fake = vec![
            mk(&mut rng, Shape::new(1, 2, 4, 4)),
            mk(&mut rng, Shape::new(1, 3, 2, 2)),
        ];
        let lambda = 7.5;
        let got = feature_matching_loss(&[&real], &[&fake], lambda).unwrap();
        let mut want = 0.0;
        for (r, f) in real.iter().zip(&fake) {
            let n = r.data().len() as f64;
            want += r
                .data()
                .iter()
                .zip(f.data())
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
                / n;
        }
        want = want / 2.0 * lambda;
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn reconstruction_examples() {
        let out = filled(0.25);
        assert_eq!(reconstruction_loss(&out, &out, 10.0).unwrap(), 0.0);
        let target = filled(0.25 - 0.2);
        let loss = reconstruction_loss(&out, &target, 10.0).unwrap();
        assert!((loss - 2.0).abs() < 1e-12);
    }

    #[test]
    fn reconstruction_rejects_shape_mismatch() {
        let a = filled(0.0);
        let b = Tensor::<f64>::zeros(Shape::new(1, 1, 3, 2));
        assert!(reconstruction_loss(&a, &b, 1.0).is_err());
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let mut rng = crate::rng::seeded(63);
        let shape = Shape::new(1, 1, 2, 2);
        let r = Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(-2.0..2.0));
        let f = Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(-2.0..2.0));

        let (gr, gf) = hinge_d_grads(&[&r], &[&f]);
        let loss_r = |x: &[f64]| {
            let rt = Tensor::from_vec(shape, x.to_vec()).unwrap();
            hinge_d_loss(&[&rt], &[&f])
        };
        crate::check::check_gradient(loss_r, r.data(), gr[0].data()).unwrap();
        let loss_f = |x: &[f64]| {
            let ft = Tensor::from_vec(shape, x.to_vec()).unwrap();
            hinge_d_loss(&[&r], &[&ft])
        };
        crate::check::check_gradient(loss_f, f.data(), gf[0].data()).unwrap();

        let gg = hinge_g_grads(&[&f]);
        let loss_g = |x: &[f64]| {
            let ft = Tensor::from_vec(shape, x.to_vec()).unwrap();
            hinge_g_loss(&[&ft])
        };
        crate::check::check_gradient(loss_g, f.data(), gg[0].data()).unwrap();
    }
}
