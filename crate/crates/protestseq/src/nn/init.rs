//! Weight initialization: Glorot-uniform input kernels, orthogonal recurrent
//! kernels, zero biases except the LSTM forget gate, which starts at 1 so the
//! cell initially remembers.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::activations::Activation;
use super::dense::DenseParams;
use super::gru::GruParams;
use super::lstm::LstmParams;

/// Uniform on `[-limit, limit)` with `limit = sqrt(6 / (fan_in + fan_out))`.
/// Rows index the output dimension, so `fan_out = rows`, `fan_in = cols`.
pub fn glorot_uniform(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-limit..limit))
}

/// Random orthogonal matrix: Gram-Schmidt on a Gaussian sample. Columns whose
/// residual collapses are redrawn, so the result always has orthonormal
/// columns.
pub fn orthogonal(rng: &mut impl Rng, n: usize) -> Array2<f64> {
    let mut q = Array2::<f64>::zeros((n, n));
    let mut col = 0;
    while col < n {
        let mut v: Array1<f64> =
            Array1::from_shape_fn(n, |_| StandardNormal.sample(rng));
        for prev in 0..col {
            let basis = q.column(prev);
            let proj = v.dot(&basis);
            v.scaled_add(-proj, &basis.to_owned());
        }
        let norm = v.dot(&v).sqrt();
        if norm < 1e-10 {
            continue; // degenerate draw, try again
        }
        q.column_mut(col).assign(&(v / norm));
        col += 1;
    }
    q
}

pub fn init_dense(
    rng: &mut impl Rng,
    out_dim: usize,
    in_dim: usize,
    activation: Activation,
) -> DenseParams {
    DenseParams {
        weights: glorot_uniform(rng, out_dim, in_dim),
        bias: Array1::zeros(out_dim),
        activation,
    }
}

pub fn init_lstm(
    rng: &mut impl Rng,
    units: usize,
    input_dim: usize,
    candidate: Activation,
    output: Activation,
) -> LstmParams {
    LstmParams {
        w_input: glorot_uniform(rng, units, input_dim),
        u_input: orthogonal(rng, units),
        b_input: Array1::zeros(units),
        w_forget: glorot_uniform(rng, units, input_dim),
        u_forget: orthogonal(rng, units),
        b_forget: Array1::ones(units),
        w_candidate: glorot_uniform(rng, units, input_dim),
        u_candidate: orthogonal(rng, units),
        b_candidate: Array1::zeros(units),
        w_output: glorot_uniform(rng, units, input_dim),
        u_output: orthogonal(rng, units),
        b_output: Array1::zeros(units),
        candidate_activation: candidate,
        output_activation: output,
    }
}

pub fn init_gru(
    rng: &mut impl Rng,
    units: usize,
    input_dim: usize,
    candidate: Activation,
) -> GruParams {
    GruParams {
        w_update: glorot_uniform(rng, units, input_dim),
        u_update: orthogonal(rng, units),
        b_update: Array1::zeros(units),
        w_reset: glorot_uniform(rng, units, input_dim),
        u_reset: orthogonal(rng, units),
        b_reset: Array1::zeros(units),
        w_candidate: glorot_uniform(rng, units, input_dim),
        u_candidate: orthogonal(rng, units),
        b_candidate: Array1::zeros(units),
        candidate_activation: candidate,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::seeded_rng;

    #[test]
    fn glorot_respects_the_fan_limit() {
        let mut rng = seeded_rng(1, 0);
        let w = glorot_uniform(&mut rng, 10, 30);
        let limit = (6.0 / 40.0f64).sqrt();
        for &v in w.iter() {
            assert!(v >= -limit && v < limit);
        }
        // Spread check: draws should cover a good part of the range.
        let max = w.iter().cloned().fold(f64::MIN, f64::max);
        let min = w.iter().cloned().fold(f64::MAX, f64::min);
        assert!(max > limit * 0.5 && min < -limit * 0.5);
    }

    #[test]
    fn orthogonal_columns_are_orthonormal() {
        let mut rng = seeded_rng(2, 0);
        let q = orthogonal(&mut rng, 8);
        let qtq = q.t().dot(&q);
        for i in 0..8 {
            for j in 0..8 {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!(
                    (qtq[[i, j]] - expected).abs() < 1e-10,
                    "Q^T Q [{i},{j}] = {}",
                    qtq[[i, j]]
                );
            }
        }
    }

    #[test]
    fn init_is_deterministic_for_a_seed() {
        let a = init_lstm(&mut seeded_rng(5, 0), 4, 3, Activation::Tanh, Activation::Tanh);
        let b = init_lstm(&mut seeded_rng(5, 0), 4, 3, Activation::Tanh, Activation::Tanh);
        assert_eq!(a.w_input, b.w_input);
        assert_eq!(a.u_output, b.u_output);
    }

    #[test]
    fn lstm_forget_bias_starts_at_one() {
        let p = init_lstm(&mut seeded_rng(5, 0), 4, 3, Activation::Tanh, Activation::Tanh);
        assert!(p.b_forget.iter().all(|&v| v == 1.0));
        assert!(p.b_input.iter().all(|&v| v == 0.0));
        assert!(p.b_output.iter().all(|&v| v == 0.0));
    }
}
