//! Inverted dropout.
//!
//! Masks are arrays of multipliers: a kept entry carries `1 / (1 - rate)` so
//! activations keep their expected value, a dropped entry is 0. Inference
//! applies no mask at all. Training code stores the sampled masks so a
//! verification pass can replay the identical stochastic forward.

use ndarray::{Array, Dimension};
use rand::Rng;

/// Samples a multiplier mask of the given shape. `rate` must be in `[0, 1)`.
pub fn sample_mask<D: Dimension>(
    shape: impl ndarray::ShapeBuilder<Dim = D>,
    rate: f64,
    rng: &mut impl Rng,
) -> Array<f64, D> {
    assert!((0.0..1.0).contains(&rate), "dropout rate {rate} outside [0, 1)");
    let keep_scale = 1.0 / (1.0 - rate);
    Array::from_shape_simple_fn(shape, || {
        if rng.random::<f64>() < rate {
            0.0
        } else {
            keep_scale
        }
    })
}

/// Applies a mask sampled by [`sample_mask`]; `None` means inference (identity).
pub fn apply_mask<D: Dimension>(x: &Array<f64, D>, mask: Option<&Array<f64, D>>) -> Array<f64, D> {
    match mask {
        Some(m) => x * m,
        None => x.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::seeded_rng;
    use ndarray::{Array1, Array2};

    #[test]
    fn mask_entries_are_zero_or_inverse_keep_rate() {
        let mut rng = seeded_rng(1, 0);
        let mask: Array2<f64> = sample_mask((30, 40), 0.25, &mut rng);
        let keep = 1.0 / 0.75;
        let mut kept = 0usize;
        for &v in mask.iter() {
            assert!(v == 0.0 || (v - keep).abs() < 1e-15);
            kept += (v != 0.0) as usize;
        }
        // 1200 Bernoulli(0.75) draws; well inside five sigmas.
        assert!((800..1000).contains(&kept), "kept {kept} of 1200");
    }

    #[test]
    fn rate_zero_keeps_everything_unscaled() {
        let mut rng = seeded_rng(2, 0);
        let mask: Array1<f64> = sample_mask(50, 0.0, &mut rng);
        assert!(mask.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn masked_apply_scales_survivors() {
        let x = Array1::from(vec![2.0, 4.0, 6.0]);
        let mask = Array1::from(vec![0.0, 2.0, 2.0]);
        assert_eq!(apply_mask(&x, Some(&mask)).to_vec(), vec![0.0, 8.0, 12.0]);
        assert_eq!(apply_mask(&x, None), x);
    }

    #[test]
    fn expected_value_is_preserved() {
        let mut rng = seeded_rng(3, 0);
        let n = 200_000;
        let mask: Array1<f64> = sample_mask(n, 0.5, &mut rng);
        let mean = mask.sum() / n as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean multiplier {mean}");
    }
}
