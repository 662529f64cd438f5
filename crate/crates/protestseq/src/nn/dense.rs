//! Fully connected layer, `y = act(W x + b)`.

use ndarray::{Array1, Array2};

use super::activations::Activation;
use super::params::TensorSet;
use super::{shape_mismatch, NnError};

#[derive(Debug, Clone)]
pub struct DenseParams {
    /// `out_dim x in_dim`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

/// Inputs and outputs retained for the backward pass.
#[derive(Debug, Clone)]
pub struct DenseCache {
    pub x: Array1<f64>,
    pub y: Array1<f64>,
}

impl DenseParams {
    pub fn zeros(out_dim: usize, in_dim: usize, activation: Activation) -> Self {
        DenseParams {
            weights: Array2::zeros((out_dim, in_dim)),
            bias: Array1::zeros(out_dim),
            activation,
        }
    }

    /// Same shapes and activation, all values zero; the container used to
    /// accumulate this layer's gradients.
    pub fn zeros_like(&self) -> Self {
        DenseParams::zeros(self.out_dim(), self.in_dim(), self.activation)
    }

    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn forward(&self, x: &Array1<f64>) -> Result<(Array1<f64>, DenseCache), NnError> {
        if x.len() != self.in_dim() {
            return Err(shape_mismatch(
                "dense forward",
                format!("input of length {}", self.in_dim()),
                format!("length {}", x.len()),
            ));
        }
        let y = self.activation.apply(&(self.weights.dot(x) + &self.bias));
        let cache = DenseCache {
            x: x.clone(),
            y: y.clone(),
        };
        Ok((y, cache))
    }

    /// Backward from a gradient on the *pre-activation* `z = W x + b`. Heads
    /// that fuse the activation into the loss derivative (sigmoid + log loss,
    /// softmax + cross-entropy) land here directly.
    pub fn backward_preact(
        &self,
        cache: &DenseCache,
        dz: &Array1<f64>,
        grads: &mut DenseParams,
    ) -> Array1<f64> {
        for (mut row, &g) in grads.weights.rows_mut().into_iter().zip(dz.iter()) {
            row.scaled_add(g, &cache.x);
        }
        grads.bias += dz;
        self.weights.t().dot(dz)
    }

    /// Backward from a gradient on the activated output.
    pub fn backward(
        &self,
        cache: &DenseCache,
        dy: &Array1<f64>,
        grads: &mut DenseParams,
    ) -> Array1<f64> {
        let dz = dy * &self.activation.grad_from_output(&cache.y);
        self.backward_preact(cache, &dz, grads)
    }
}

impl TensorSet for DenseParams {
    fn visit(&self, f: &mut dyn FnMut(&str, &[f64])) {
        f("weights", self.weights.as_slice().expect("contiguous"));
        f("bias", self.bias.as_slice().expect("contiguous"));
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        f("weights", self.weights.as_slice_mut().expect("contiguous"));
        f("bias", self.bias.as_slice_mut().expect("contiguous"));
    }
}
