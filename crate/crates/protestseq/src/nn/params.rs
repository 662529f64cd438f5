//! Named-tensor traversal.
//!
//! `TensorSet` is the single source of truth for the order and naming of a
//! model's tensors. The optimizer keys its accumulators by these names, the
//! gradient checker reports per-tensor errors by them, and checkpoints write
//! tensors in exactly this visitation order. Implementations must visit the
//! same tensors in the same order on every call.

/// A set of named `f64` tensors visited in a stable declaration order.
pub trait TensorSet {
    fn visit(&self, f: &mut dyn FnMut(&str, &[f64]));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64]));

    /// Name and element count per tensor, in visitation order.
    fn tensor_sizes(&self) -> Vec<(String, usize)> {
        let mut out = Vec::new();
        self.visit(&mut |name, data| out.push((name.to_string(), data.len())));
        out
    }

    fn flat_len(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, data| n += data.len());
        n
    }

    /// All tensors concatenated in visitation order.
    fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.flat_len());
        self.visit(&mut |_, data| out.extend_from_slice(data));
        out
    }

    /// Inverse of [`to_flat`](TensorSet::to_flat). Panics if `src` does not
    /// have exactly `flat_len` elements; callers pair it with a flat vector
    /// obtained from the same set.
    fn assign_flat(&mut self, src: &[f64]) {
        let mut offset = 0;
        self.visit_mut(&mut |_, data| {
            data.copy_from_slice(&src[offset..offset + data.len()]);
            offset += data.len();
        });
        assert_eq!(offset, src.len(), "flat length mismatch in assign_flat");
    }

    fn zero_all(&mut self) {
        self.visit_mut(&mut |_, data| data.fill(0.0));
    }
}

/// Visits `set` with every tensor name prefixed by `prefix.`, for composing
/// sub-layer tensor sets into a model-level one.
pub fn visit_prefixed(set: &dyn TensorSet, prefix: &str, f: &mut dyn FnMut(&str, &[f64])) {
    set.visit(&mut |name, data| f(&format!("{prefix}.{name}"), data));
}

pub fn visit_prefixed_mut(
    set: &mut dyn TensorSet,
    prefix: &str,
    f: &mut dyn FnMut(&str, &mut [f64]),
) {
    set.visit_mut(&mut |name, data| f(&format!("{prefix}.{name}"), data));
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Pair {
        a: Vec<f64>,
        b: Vec<f64>,
    }

    impl TensorSet for Pair {
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
    fn flat_round_trip() {
        let mut p = Pair {
            a: vec![1.0, 2.0],
            b: vec![3.0],
        };
        assert_eq!(p.flat_len(), 3);
        assert_eq!(p.to_flat(), vec![1.0, 2.0, 3.0]);
        p.assign_flat(&[9.0, 8.0, 7.0]);
        assert_eq!(p.a, vec![9.0, 8.0]);
        assert_eq!(p.b, vec![7.0]);
        p.zero_all();
        assert_eq!(p.to_flat(), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn sizes_in_declaration_order() {
        let p = Pair {
            a: vec![0.0; 4],
            b: vec![0.0; 2],
        };
        assert_eq!(
            p.tensor_sizes(),
            vec![("a".to_string(), 4), ("b".to_string(), 2)]
        );
    }
}
