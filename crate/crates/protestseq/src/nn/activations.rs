//! Elementwise activations and the softmax.

use ndarray::Array1;
use serde::{Deserialize, Serialize};

/// Activation applied elementwise inside a cell. `Identity` exists because the
/// classifier's LSTM runs its candidate and cell output without squashing;
/// the sigmoid gates are not configurable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(&self, x: &Array1<f64>) -> Array1<f64> {
        match self {
            Activation::Identity => x.clone(),
            Activation::Tanh => x.mapv(f64::tanh),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed in terms of the activation's *output* value, which
    /// is what the step caches hold.
    pub fn grad_from_output(&self, y: &Array1<f64>) -> Array1<f64> {
        match self {
            Activation::Identity => Array1::ones(y.len()),
            Activation::Tanh => y.mapv(|v| 1.0 - v * v),
            Activation::Sigmoid => y.mapv(|v| v * (1.0 - v)),
        }
    }
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn sigmoid(x: &Array1<f64>) -> Array1<f64> {
    x.mapv(sigmoid_scalar)
}

/// Numerically stable softmax: shifts by the max before exponentiating.
pub fn softmax(x: &Array1<f64>) -> Array1<f64> {
    let max = x.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let exps = x.mapv(|v| (v - max).exp());
    let sum = exps.sum();
    exps / sum
}
