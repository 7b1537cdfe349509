//! Sinusoidal encoding of absolute pixel coordinates.
//!
//! Each coordinate axis contributes sin/cos pairs at dyadic periods 2, 4,
//! ..., 2^K where K = log2(S) and S is the total downsampling factor of the
//! parameter grid. Every period divides S, so the encoding is identical at p
//! and p + S: it carries exactly the within-block phase that the upsampled
//! (block-constant) MLP parameters cannot, which is what lets the pixelwise
//! networks draw detail finer than the grid.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// Channel ordering: x-axis octaves first, then y-axis, each octave
/// contributing (sin, cos) in order of increasing period.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PositionalEncodingSpec {
    octaves: usize,
    total_downsampling: usize,
}

impl PositionalEncodingSpec {
    /// `total_downsampling` must be a power of two >= 2 so that
    /// K = log2(S) >= 1.
    pub fn new(total_downsampling: usize) -> Result<Self> {
        if total_downsampling < 2 || !total_downsampling.is_power_of_two() {
            return Err(Error::Config(format!(
                "total downsampling {total_downsampling} must be a power of two >= 2"
            )));
        }
        Ok(PositionalEncodingSpec {
            octaves: total_downsampling.trailing_zeros() as usize,
            total_downsampling,
        })
    }

    pub fn octaves(&self) -> usize {
        self.octaves
    }

    pub fn total_downsampling(&self) -> usize {
        self.total_downsampling
    }

    /// 2 axes x 2 functions x K octaves.
    pub fn channels(&self) -> usize {
        4 * self.octaves
    }
}

/// sin/cos of `2*pi*p / 2^k` for octave k. The phase is reduced modulo the
/// period in integer arithmetic first, so pixels one full block apart encode
/// bit-identically.
#[inline]
fn octave_pair<T: Scalar>(p: usize, k: usize) -> (T, T) {
    let period = 1usize << k;
    let arg = std::f64::consts::TAU * (p & (period - 1)) as f64 / period as f64;
    (T::from_f64(arg.sin()), T::from_f64(arg.cos()))
}

/// Encodes one pixel coordinate (x = width index, y = height index) into
/// `4K` values ordered `[sin_x(1), cos_x(1), ..., sin_x(K), cos_x(K),
/// sin_y(1), ..., cos_y(K)]`.
pub fn encode_position<T: Scalar>(x: usize, y: usize, spec: &PositionalEncodingSpec) -> Vec<T> {
    let mut out = Vec::with_capacity(spec.channels());
    for p in [x, y] {
        for k in 1..=spec.octaves {
            let (s, c) = octave_pair::<T>(p, k);
            out.push(s);
            out.push(c);
        }
    }
    out
}

/// Full-resolution encoding image of shape `(1, 4K, H, W)`; the channel
/// column at (y, x) equals [`encode_position`] of that pixel.
pub fn encode_grid<T: Scalar>(
    height: usize,
    width: usize,
    spec: &PositionalEncodingSpec,
) -> Result<Tensor<T>> {
    if height == 0 || width == 0 {
        return Err(Error::Config("encoding grid extents must be positive".into()));
    }
    let k_total = spec.octaves;
    let mut out = Tensor::try_zeros(Shape::new(1, spec.channels(), height, width))?;
    // x-axis channels vary only along x; y-axis channels only along y.
    for k in 1..=k_total {
        let row: Vec<(T, T)> = (0..width).map(|x| octave_pair::<T>(x, k)).collect();
        let sin_plane = out.plane_mut(0, (k - 1) * 2);
        for y in 0..height {
            for x in 0..width {
                sin_plane[y * width + x] = row[x].0;
            }
        }
        let cos_plane = out.plane_mut(0, (k - 1) * 2 + 1);
        for y in 0..height {
            for x in 0..width {
                cos_plane[y * width + x] = row[x].1;
            }
        }
        let col: Vec<(T, T)> = (0..height).map(|y| octave_pair::<T>(y, k)).collect();
        let sin_plane = out.plane_mut(0, 2 * k_total + (k - 1) * 2);
        for y in 0..height {
            sin_plane[y * width..(y + 1) * width].fill(col[y].0);
        }
        let cos_plane = out.plane_mut(0, 2 * k_total + (k - 1) * 2 + 1);
        for y in 0..height {
            cos_plane[y * width..(y + 1) * width].fill(col[y].1);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn origin_encodes_to_zero_sin_unit_cos() {
        let spec = PositionalEncodingSpec::new(16).unwrap();
        let enc = encode_position::<f64>(0, 0, &spec);
        assert_eq!(enc.len(), 16);
        for pair in enc.chunks(2) {
            assert_eq!(pair[0], 0.0);
            assert_eq!(pair[1], 1.0);
        }
    }

    #[test]
    fn half_period_hits_pi() {
        let spec = PositionalEncodingSpec::new(32).unwrap();
        for k in 1..=5usize {
            let enc = encode_position::<f64>(1 << (k - 1), 0, &spec);
            let sin = enc[(k - 1) * 2];
            let cos = enc[(k - 1) * 2 + 1];
            assert!(sin.abs() < 1e-12, "octave {k} sin {sin}");
            assert!((cos + 1.0).abs() < 1e-12, "octave {k} cos {cos}");
        }
    }

    #[test]
    fn known_values_at_quarter_turns() {
        // p = (1, 3), S = 4: arguments are exact multiples of pi/2.
        let spec = PositionalEncodingSpec::new(4).unwrap();
        let enc = encode_position::<f64>(1, 3, &spec);
        let want = [0.0, -1.0, 1.0, 0.0, 0.0, -1.0, -1.0, 0.0];
        assert_eq!(enc.len(), want.len());
        for (got, want) in enc.iter().zip(want) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn rejects_non_power_of_two() {
        assert!(PositionalEncodingSpec::new(12).is_err());
        assert!(PositionalEncodingSpec::new(1).is_err());
        assert!(PositionalEncodingSpec::new(0).is_err());
    }

    #[test]
    fn channel_count_is_4_log2_s() {
        for (s, channels) in [(2, 4), (16, 16), (64, 24)] {
            assert_eq!(PositionalEncodingSpec::new(s).unwrap().channels(), channels);
        }
    }

    #[test]
    fn grid_single_pixel_matches_scalar_path() {
        let spec = PositionalEncodingSpec::new(8).unwrap();
        let grid = encode_grid::<f64>(1, 1, &spec).unwrap();
        let scalar = encode_position::<f64>(0, 0, &spec);
        for (c, want) in scalar.iter().enumerate() {
            assert_eq!(grid.get(0, c, 0, 0), *want);
        }
    }

    #[test]
    fn grid_spot_checks_equal_scalar_encoding() {
        let spec = PositionalEncodingSpec::new(16).unwrap();
        let (h, w) = (24, 40);
        let grid = encode_grid::<f64>(h, w, &spec).unwrap();
        let mut rng = crate::rng::seeded(12);
        use rand::Rng;
        for _ in 0..100 {
            let x = rng.gen_range(0..w);
            let y = rng.gen_range(0..h);
            let scalar = encode_position::<f64>(x, y, &spec);
            for (c, want) in scalar.iter().enumerate() {
                assert_eq!(grid.get(0, c, y, x), *want, "channel {c} at ({x},{y})");
            }
        }
    }

    proptest! {
        #[test]
        fn encoding_is_periodic_in_s(x in 0usize..4096, y in 0usize..4096, shift in 1usize..4) {
            let spec = PositionalEncodingSpec::new(16).unwrap();
            let s = spec.total_downsampling();
            let a = encode_position::<f64>(x, y, &spec);
            let b = encode_position::<f64>(x + shift * s, y + shift * s, &spec);
            prop_assert_eq!(a, b);
        }

        #[test]
        fn sin_cos_pairs_lie_on_unit_circle(x in 0usize..100_000, y in 0usize..100_000) {
            let spec = PositionalEncodingSpec::new(64).unwrap();
            let enc = encode_position::<f64>(x, y, &spec);
            for pair in enc.chunks(2) {
                let norm = pair[0] * pair[0] + pair[1] * pair[1];
                prop_assert!((norm - 1.0).abs() < 1e-12);
            }
        }
    }
}
