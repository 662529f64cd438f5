//! RMSProp with per-tensor accumulators keyed by tensor name.
//!
//! ```text
//! v <- decay * v + (1 - decay) * g^2        (elementwise)
//! theta <- theta - lr * g / (sqrt(v) + eps)
//! ```
//!
//! Accumulators persist across steps for the life of the optimizer, so a
//! tensor that sits out some steps (an inactive task head) keeps its history.

use std::collections::BTreeMap;

use super::params::TensorSet;
use super::NnError;

#[derive(Debug, Clone)]
pub struct RmsProp {
    pub learning_rate: f64,
    pub decay: f64,
    pub epsilon: f64,
    /// Squared-gradient moving averages, keyed by tensor name.
    accumulators: BTreeMap<String, Vec<f64>>,
}

impl RmsProp {
    pub const DEFAULT_LR: f64 = 0.001;
    pub const DEFAULT_DECAY: f64 = 0.9;
    pub const DEFAULT_EPSILON: f64 = 1e-7;

    pub fn new(learning_rate: f64, decay: f64, epsilon: f64) -> Result<Self, NnError> {
        if learning_rate <= 0.0 || !learning_rate.is_finite() {
            return Err(NnError::InvalidHyperparameter(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        if !(0.0..1.0).contains(&decay) {
            return Err(NnError::InvalidHyperparameter(format!(
                "decay must be in [0, 1), got {decay}"
            )));
        }
        if epsilon <= 0.0 {
            return Err(NnError::InvalidHyperparameter(format!(
                "epsilon must be positive, got {epsilon}"
            )));
        }
        Ok(RmsProp {
            learning_rate,
            decay,
            epsilon,
            accumulators: BTreeMap::new(),
        })
    }

    pub fn with_defaults() -> Self {
        Self::new(Self::DEFAULT_LR, Self::DEFAULT_DECAY, Self::DEFAULT_EPSILON)
            .expect("default hyperparameters are valid")
    }

    /// Updates one named tensor in place.
    pub fn step_tensor(&mut self, name: &str, param: &mut [f64], grad: &[f64]) {
        assert_eq!(
            param.len(),
            grad.len(),
            "gradient length mismatch for tensor {name}"
        );
        let acc = self
            .accumulators
            .entry(name.to_string())
            .or_insert_with(|| vec![0.0; param.len()]);
        assert_eq!(acc.len(), param.len(), "accumulator shape drift for {name}");
        for ((p, &g), v) in param.iter_mut().zip(grad.iter()).zip(acc.iter_mut()) {
            *v = self.decay * *v + (1.0 - self.decay) * g * g;
            *p -= self.learning_rate * g / (v.sqrt() + self.epsilon);
        }
    }

    /// Updates every tensor whose name passes the filter. `params` and
    /// `grads` must visit identical names in identical order, which holds for
    /// a model and its `zeros_like` gradient container.
    pub fn step_filtered(
        &mut self,
        params: &mut impl TensorSet,
        grads: &impl TensorSet,
        keep: impl Fn(&str) -> bool,
    ) {
        let mut grad_list: Vec<(String, Vec<f64>)> = Vec::new();
        grads.visit(&mut |name, data| grad_list.push((name.to_string(), data.to_vec())));
        let mut idx = 0;
        // Split the borrow: step_tensor needs &mut self while we walk params.
        let (lr, decay, eps) = (self.learning_rate, self.decay, self.epsilon);
        let accs = &mut self.accumulators;
        params.visit_mut(&mut |name, data| {
            let (gname, grad) = &grad_list[idx];
            idx += 1;
            assert_eq!(name, gname, "parameter/gradient walk order diverged");
            if !keep(name) {
                return;
            }
            let acc = accs
                .entry(name.to_string())
                .or_insert_with(|| vec![0.0; data.len()]);
            for ((p, &g), v) in data.iter_mut().zip(grad.iter()).zip(acc.iter_mut()) {
                *v = decay * *v + (1.0 - decay) * g * g;
                *p -= lr * g / (v.sqrt() + eps);
            }
        });
        assert_eq!(idx, grad_list.len(), "gradient walk left tensors unvisited");
    }

    /// Updates every tensor.
    pub fn step(&mut self, params: &mut impl TensorSet, grads: &impl TensorSet) {
        self.step_filtered(params, grads, |_| true);
    }

    /// Number of tensors with live accumulators, mostly for tests.
    pub fn tracked_tensors(&self) -> usize {
        self.accumulators.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// First step from v = 0 with g = 1: v' = 0.1, and the parameter moves by
    /// lr * 1 / (sqrt(0.1) + eps) which is 0.31622776... for lr = 0.1.
    #[test]
    fn first_step_matches_hand_computation() {
        let mut opt = RmsProp::new(0.1, 0.9, 1e-7).unwrap();
        let mut theta = vec![1.0];
        opt.step_tensor("t", &mut theta, &[1.0]);
        let expected_delta = 0.1 / (0.1f64.sqrt() + 1e-7);
        assert!((theta[0] - (1.0 - expected_delta)).abs() < 1e-12);
        assert!((expected_delta - 0.316_227_766).abs() < 1e-6);
    }

    #[test]
    fn accumulator_persists_across_steps() {
        let mut opt = RmsProp::new(0.1, 0.9, 1e-7).unwrap();
        let mut theta = vec![0.0];
        opt.step_tensor("t", &mut theta, &[1.0]);
        let after_first = theta[0];
        opt.step_tensor("t", &mut theta, &[1.0]);
        // v = 0.9 * 0.1 + 0.1 = 0.19 on the second step.
        let expected = after_first - 0.1 / (0.19f64.sqrt() + 1e-7);
        assert!((theta[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut opt = RmsProp::with_defaults();
        let mut theta = vec![0.5, -0.25];
        opt.step_tensor("t", &mut theta, &[0.0, 0.0]);
        assert_eq!(theta, vec![0.5, -0.25]);
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        assert!(RmsProp::new(0.0, 0.9, 1e-7).is_err());
        assert!(RmsProp::new(0.1, 1.0, 1e-7).is_err());
        assert!(RmsProp::new(0.1, 0.9, 0.0).is_err());
    }

    struct Two {
        a: Vec<f64>,
        b: Vec<f64>,
    }
    impl TensorSet for Two {
        fn visit(&self, f: &mut dyn FnMut(&str, &[f64])) {
            f("a", &self.a);
            f("b", &self.b);
        }
        fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
            f("a", &mut self.a);
            f("b", &mut self.b);
        }
    }

    #[test]
    fn filtered_step_skips_inactive_tensors_and_their_accumulators() {
        let mut opt = RmsProp::new(0.1, 0.9, 1e-7).unwrap();
        let mut params = Two {
            a: vec![1.0],
            b: vec![1.0],
        };
        let grads = Two {
            a: vec![1.0],
            b: vec![1.0],
        };
        opt.step_filtered(&mut params, &grads, |name| name == "a");
        assert!(params.a[0] < 1.0);
        assert_eq!(params.b[0], 1.0);
        assert_eq!(opt.tracked_tensors(), 1);
    }
}
