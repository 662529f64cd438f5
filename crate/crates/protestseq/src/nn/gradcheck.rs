//! Finite-difference gradient verification.
//!
//! Central differences with a configurable epsilon, compared tensor by
//! tensor against analytic gradients using the symmetric relative error
//! `|a - n| / max(1e-6, |a| + |n|)`.

use super::params::TensorSet;

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_THRESHOLD: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct TensorCheck {
    pub name: String,
    pub max_relative_error: f64,
    /// Flat index of the worst element, for debugging a failure.
    pub worst_index: usize,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn max_relative_error(&self) -> f64 {
        self.tensors
            .iter()
            .map(|t| t.max_relative_error)
            .fold(0.0, f64::max)
    }

    pub fn passes(&self, threshold: f64) -> bool {
        self.max_relative_error() <= threshold
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    // The floor sets an absolute tolerance for near-zero gradients. Central
    // differences at epsilon ~1e-5 on a loss of order 1 carry ~1e-10 of
    // truncation and roundoff, so gradients below the floor can only be
    // checked to that absolute precision; a smaller floor turns the noise
    // itself into spurious relative error on the deepest recurrent weights.
    (analytic - numeric).abs() / f64::max(1e-6, analytic.abs() + numeric.abs())
}

/// Checks `analytic` (a gradient container walking the same tensors as
/// `params`) against central differences of `loss` over every parameter.
/// `params` is restored to its original values before returning.
pub fn grad_check<P: TensorSet, G: TensorSet>(
    params: &mut P,
    analytic: &G,
    mut loss: impl FnMut(&P) -> f64,
    epsilon: f64,
) -> GradCheckReport {
    let base = params.to_flat();
    let grad = analytic.to_flat();
    assert_eq!(
        base.len(),
        grad.len(),
        "parameter and gradient sets have different sizes"
    );
    let sizes = params.tensor_sizes();
    let mut work = base.clone();
    let mut tensors = Vec::with_capacity(sizes.len());
    let mut offset = 0;
    for (name, len) in sizes {
        let mut worst = 0.0f64;
        let mut worst_index = 0usize;
        for i in offset..offset + len {
            work[i] = base[i] + epsilon;
            params.assign_flat(&work);
            let up = loss(&*params);
            work[i] = base[i] - epsilon;
            params.assign_flat(&work);
            let down = loss(&*params);
            work[i] = base[i];
            let numeric = (up - down) / (2.0 * epsilon);
            let rel = relative_error(grad[i], numeric);
            if rel > worst {
                worst = rel;
                worst_index = i - offset;
            }
        }
        tensors.push(TensorCheck {
            name,
            max_relative_error: worst,
            worst_index,
        });
        offset += len;
    }
    params.assign_flat(&base);
    GradCheckReport { tensors }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// One tensor, loss = sum of squares, analytic gradient 2x.
    struct Quad {
        x: Vec<f64>,
    }
    impl TensorSet for Quad {
        fn visit(&self, f: &mut dyn FnMut(&str, &[f64])) {
            f("x", &self.x);
        }
        fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
            f("x", &mut self.x);
        }
    }

    #[test]
    fn correct_gradient_passes() {
        let mut p = Quad {
            x: vec![0.3, -1.2, 2.0],
        };
        let g = Quad {
            x: p.x.iter().map(|v| 2.0 * v).collect(),
        };
        let report = grad_check(&mut p, &g, |q| q.x.iter().map(|v| v * v).sum(), 1e-5);
        assert!(report.passes(DEFAULT_THRESHOLD), "{report:?}");
        // Parameters restored.
        assert_eq!(p.x, vec![0.3, -1.2, 2.0]);
    }

    #[test]
    fn corrupted_gradient_fails() {
        let mut p = Quad {
            x: vec![0.3, -1.2, 2.0],
        };
        let mut g: Vec<f64> = p.x.iter().map(|v| 2.0 * v).collect();
        g[1] += 1e-2;
        let g = Quad { x: g };
        let report = grad_check(&mut p, &g, |q| q.x.iter().map(|v| v * v).sum(), 1e-5);
        assert!(!report.passes(DEFAULT_THRESHOLD));
        assert_eq!(report.tensors[0].worst_index, 1);
    }

    #[test]
    fn relative_error_is_symmetric_and_guarded() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        let a = relative_error(1.0, 2.0);
        let b = relative_error(2.0, 1.0);
        assert_eq!(a, b);
        assert!((a - 1.0 / 3.0).abs() < 1e-15);
    }
}
