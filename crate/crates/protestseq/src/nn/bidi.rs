//! Bidirectional wrappers over the recurrent cells, plus max-over-time
//! pooling.
//!
//! The backward direction runs over the reversed input. In sequence mode the
//! output row for timestep `t` is `[h_fwd[t] | h_bwd[T-1-t]]`, i.e. both
//! directions' views of the same original position. In final mode the output
//! is each direction's last processing state concatenated.

use ndarray::{s, Array1, Array2, Axis};

use super::gru::{GruParams, GruSeqCache};
use super::lstm::{LstmParams, LstmSeqCache};
use super::params::{visit_prefixed, visit_prefixed_mut, TensorSet};
use super::{shape_mismatch, NnError};

fn reverse_rows(xs: &Array2<f64>) -> Array2<f64> {
    xs.slice(s![..;-1, ..]).to_owned()
}

/// Sequence-mode output: `out[t] = [fwd[t] | bwd[T-1-t]]`.
fn interleave(fwd_seq: &Array2<f64>, bwd_seq: &Array2<f64>) -> Array2<f64> {
    let t_len = fwd_seq.nrows();
    let mut out = Array2::zeros((t_len, fwd_seq.ncols() + bwd_seq.ncols()));
    for t in 0..t_len {
        let mut row = out.row_mut(t);
        row.slice_mut(s![..fwd_seq.ncols()]).assign(&fwd_seq.row(t));
        row.slice_mut(s![fwd_seq.ncols()..])
            .assign(&bwd_seq.row(t_len - 1 - t));
    }
    out
}

/// Splits an upstream sequence gradient back into per-direction gradients in
/// each direction's own processing order.
fn split_upstream(d_out: &Array2<f64>, fwd_units: usize) -> (Array2<f64>, Array2<f64>) {
    let t_len = d_out.nrows();
    let d_fwd = d_out.slice(s![.., ..fwd_units]).to_owned();
    let mut d_bwd = Array2::zeros((t_len, d_out.ncols() - fwd_units));
    for t in 0..t_len {
        d_bwd
            .row_mut(t_len - 1 - t)
            .assign(&d_out.slice(s![t, fwd_units..]));
    }
    (d_fwd, d_bwd)
}

macro_rules! bidirectional {
    ($name:ident, $cache_name:ident, $params:ty, $seq_cache:ty) => {
        #[derive(Debug, Clone)]
        pub struct $name {
            pub fwd: $params,
            pub bwd: $params,
        }

        /// Per-direction sequence caches; the backward direction's cache is
        /// over the reversed input.
        #[derive(Debug, Clone)]
        pub struct $cache_name {
            pub fwd: $seq_cache,
            pub bwd: $seq_cache,
        }

        impl $name {
            pub fn output_width(&self) -> usize {
                self.fwd.units() + self.bwd.units()
            }

            pub fn input_dim(&self) -> usize {
                self.fwd.input_dim()
            }

            pub fn zeros_like(&self) -> Self {
                $name {
                    fwd: self.fwd.zeros_like(),
                    bwd: self.bwd.zeros_like(),
                }
            }

            fn run_both(&self, xs: &Array2<f64>) -> Result<($seq_cache, $seq_cache), NnError> {
                if self.bwd.input_dim() != self.fwd.input_dim() {
                    return Err(shape_mismatch(
                        "bidirectional",
                        format!("both directions reading {} columns", self.fwd.input_dim()),
                        format!("bwd reads {}", self.bwd.input_dim()),
                    ));
                }
                let fwd = self.fwd.run_cached(xs)?;
                let bwd = self.bwd.run_cached(&reverse_rows(xs))?;
                Ok((fwd, bwd))
            }

            /// `T x input_dim` in, `T x output_width` out, with caches.
            pub fn run_sequence_cached(
                &self,
                xs: &Array2<f64>,
            ) -> Result<(Array2<f64>, $cache_name), NnError> {
                let (fwd, bwd) = self.run_both(xs)?;
                let out = interleave(&fwd.h_seq, &bwd.h_seq);
                Ok((out, $cache_name { fwd, bwd }))
            }

            pub fn run_sequence(&self, xs: &Array2<f64>) -> Result<Array2<f64>, NnError> {
                Ok(self.run_sequence_cached(xs)?.0)
            }

            /// Final-state mode: `[h_fwd_last | h_bwd_last]`; zeros for an
            /// empty input.
            pub fn run_final_cached(
                &self,
                xs: &Array2<f64>,
            ) -> Result<(Array1<f64>, $cache_name), NnError> {
                let (fwd, bwd) = self.run_both(xs)?;
                let mut out = Array1::zeros(self.output_width());
                out.slice_mut(s![..self.fwd.units()]).assign(&fwd.final_h());
                out.slice_mut(s![self.fwd.units()..]).assign(&bwd.final_h());
                Ok((out, $cache_name { fwd, bwd }))
            }

            pub fn run_final(&self, xs: &Array2<f64>) -> Result<Array1<f64>, NnError> {
                Ok(self.run_final_cached(xs)?.0)
            }

            /// Backward for sequence mode. Returns the gradient on the inputs.
            pub fn backward_sequence(
                &self,
                cache: &$cache_name,
                d_out: &Array2<f64>,
                grads: &mut $name,
            ) -> Result<Array2<f64>, NnError> {
                let (d_fwd, d_bwd) = split_upstream(d_out, self.fwd.units());
                let dx_fwd = self.fwd.bptt(&cache.fwd, &d_fwd, &mut grads.fwd)?;
                let dx_bwd = self.bwd.bptt(&cache.bwd, &d_bwd, &mut grads.bwd)?;
                Ok(dx_fwd + reverse_rows(&dx_bwd))
            }

            /// Backward for final-state mode.
            pub fn backward_final(
                &self,
                cache: &$cache_name,
                d_out: &Array1<f64>,
                grads: &mut $name,
            ) -> Result<Array2<f64>, NnError> {
                if d_out.len() != self.output_width() {
                    return Err(shape_mismatch(
                        "bidirectional final backward",
                        format!("{}", self.output_width()),
                        format!("{}", d_out.len()),
                    ));
                }
                let t_len = cache.fwd.steps.len();
                if t_len == 0 {
                    // Nothing was processed, so nothing receives gradient.
                    return Ok(Array2::zeros((0, self.input_dim())));
                }
                let mut d_fwd = Array2::zeros((t_len, self.fwd.units()));
                d_fwd
                    .row_mut(t_len - 1)
                    .assign(&d_out.slice(s![..self.fwd.units()]));
                let mut d_bwd = Array2::zeros((t_len, self.bwd.units()));
                d_bwd
                    .row_mut(t_len - 1)
                    .assign(&d_out.slice(s![self.fwd.units()..]));
                let dx_fwd = self.fwd.bptt(&cache.fwd, &d_fwd, &mut grads.fwd)?;
                let dx_bwd = self.bwd.bptt(&cache.bwd, &d_bwd, &mut grads.bwd)?;
                Ok(dx_fwd + reverse_rows(&dx_bwd))
            }
        }

        impl TensorSet for $name {
            fn visit(&self, f: &mut dyn FnMut(&str, &[f64])) {
                visit_prefixed(&self.fwd, "fwd", f);
                visit_prefixed(&self.bwd, "bwd", f);
            }
            fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
                visit_prefixed_mut(&mut self.fwd, "fwd", f);
                visit_prefixed_mut(&mut self.bwd, "bwd", f);
            }
        }
    };
}

bidirectional!(BiLstm, BiLstmCache, LstmParams, LstmSeqCache);
bidirectional!(BiGru, BiGruCache, GruParams, GruSeqCache);

/// Column-wise max over the unmasked rows of `seq`. Returns the pooled vector
/// and, per column, the row index that won (ties go to the earliest row).
/// Fails if no row is unmasked.
pub fn temporal_max_pool(
    seq: &Array2<f64>,
    mask: &[bool],
) -> Result<(Array1<f64>, Vec<usize>), NnError> {
    if mask.len() != seq.nrows() {
        return Err(shape_mismatch(
            "max pool",
            format!("mask of length {}", seq.nrows()),
            format!("length {}", mask.len()),
        ));
    }
    if !mask.iter().any(|&m| m) {
        return Err(NnError::EmptySequence);
    }
    let width = seq.ncols();
    let mut best = Array1::from_elem(width, f64::NEG_INFINITY);
    let mut argmax = vec![usize::MAX; width];
    for (t, row) in seq.axis_iter(Axis(0)).enumerate() {
        if !mask[t] {
            continue;
        }
        for (j, &v) in row.iter().enumerate() {
            if v > best[j] {
                best[j] = v;
                argmax[j] = t;
            }
        }
    }
    Ok((best, argmax))
}

/// Scatters the pooled gradient back to the winning rows.
pub fn temporal_max_pool_backward(
    d_pooled: &Array1<f64>,
    argmax: &[usize],
    rows: usize,
) -> Array2<f64> {
    let mut d_seq = Array2::zeros((rows, d_pooled.len()));
    for (j, (&t, &g)) in argmax.iter().zip(d_pooled.iter()).enumerate() {
        d_seq[[t, j]] += g;
    }
    d_seq
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::activations::Activation;
    use crate::nn::init;
    use crate::nn::seeded_rng;
    use ndarray::array;

    fn small_bigru(units_per_dir: usize, input_dim: usize) -> BiGru {
        let mut rng = seeded_rng(42, 0);
        BiGru {
            fwd: init::init_gru(&mut rng, units_per_dir, input_dim, Activation::Tanh),
            bwd: init::init_gru(&mut rng, units_per_dir, input_dim, Activation::Tanh),
        }
    }

    #[test]
    fn sequence_rows_pair_directions_on_the_same_position() {
        let layer = small_bigru(3, 2);
        let xs = Array2::from_shape_fn((5, 2), |(i, j)| (i as f64) * 0.1 - (j as f64) * 0.2);
        let out = layer.run_sequence(&xs).unwrap();
        assert_eq!(out.dim(), (5, 6));
        let fwd_seq = layer.fwd.run(&xs).unwrap();
        let bwd_seq = layer.bwd.run(&reverse_rows(&xs)).unwrap();
        for t in 0..5 {
            assert_eq!(out.slice(s![t, ..3]), fwd_seq.row(t));
            assert_eq!(out.slice(s![t, 3..]), bwd_seq.row(4 - t));
        }
    }

    #[test]
    fn final_mode_concatenates_last_processing_states() {
        let layer = small_bigru(3, 2);
        let xs = Array2::from_shape_fn((4, 2), |(i, j)| ((i + j) as f64).cos());
        let fin = layer.run_final(&xs).unwrap();
        let seq = layer.run_sequence(&xs).unwrap();
        // fwd final = fwd part of the last row; bwd final = bwd part of row 0.
        assert_eq!(fin.slice(s![..3]), seq.slice(s![3, ..3]));
        assert_eq!(fin.slice(s![3..]), seq.slice(s![0, 3..]));
    }

    #[test]
    fn palindrome_input_gives_mirrored_directions_with_tied_weights() {
        let mut rng = seeded_rng(9, 0);
        let cell = init::init_gru(&mut rng, 2, 1, Activation::Tanh);
        let layer = BiGru {
            fwd: cell.clone(),
            bwd: cell,
        };
        let xs = array![[0.3], [-0.7], [0.3]];
        let out = layer.run_sequence(&xs).unwrap();
        // Reading the palindrome backwards is the same walk, so position t
        // seen forwards equals position T-1-t seen backwards.
        for t in 0..3 {
            for j in 0..2 {
                assert!((out[[t, j]] - out[[2 - t, 2 + j]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn empty_input_final_state_is_zero() {
        let layer = small_bigru(2, 3);
        let fin = layer.run_final(&Array2::zeros((0, 3))).unwrap();
        assert_eq!(fin, Array1::<f64>::zeros(4));
    }

    #[test]
    fn max_pool_picks_columnwise_maxima_over_unmasked_rows() {
        let seq = array![[1.0, 5.0], [9.0, 2.0], [3.0, 7.0]];
        let (pooled, arg) = temporal_max_pool(&seq, &[true, false, true]).unwrap();
        assert_eq!(pooled, array![3.0, 7.0]);
        assert_eq!(arg, vec![2, 2]);
    }

    #[test]
    fn max_pool_ties_go_to_the_earliest_row() {
        let seq = array![[4.0], [4.0], [4.0]];
        let (_, arg) = temporal_max_pool(&seq, &[true, true, true]).unwrap();
        assert_eq!(arg, vec![0]);
    }

    #[test]
    fn max_pool_rejects_fully_masked_input() {
        let seq = array![[1.0], [2.0]];
        assert!(matches!(
            temporal_max_pool(&seq, &[false, false]),
            Err(NnError::EmptySequence)
        ));
    }

    #[test]
    fn max_pool_backward_routes_gradient_to_winners() {
        let seq = array![[1.0, 5.0], [9.0, 2.0], [3.0, 7.0]];
        let (_, arg) = temporal_max_pool(&seq, &[true, true, true]).unwrap();
        let d = temporal_max_pool_backward(&array![0.5, -2.0], &arg, 3);
        assert_eq!(d, array![[0.0, 0.0], [0.5, 0.0], [0.0, -2.0]]);
    }
}
