//! End-to-end gradient verification of both assembled architectures.
//!
//! The layer-level backward passes have their own finite-difference tests;
//! these checks exercise the full wiring instead: dropout mask replay, the
//! pooling scatter, the role branch concat split, and head selection. Each
//! named check perturbs every parameter of a small model and compares the
//! analytic gradient against central differences.

use ndarray::Array2;

use crate::nn::{
    self, grad_check, log_loss, log_loss_grad, masked_cross_entropy, masked_cross_entropy_grad,
    GradCheckReport, TensorSet,
};

use super::{
    build_classifier, build_tagger, Pass, TaggerUpstream, TaskHead, TrainConfig,
};

pub const FD_EPSILON: f64 = 1e-5;
pub const PASS_THRESHOLD: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct NamedReport {
    pub component: String,
    pub report: GradCheckReport,
}

impl NamedReport {
    pub fn passes(&self) -> bool {
        self.report.passes(PASS_THRESHOLD)
    }
}

fn fixed_input(rows: usize, cols: usize, salt: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |(i, j)| {
        ((i * 7 + j * 3) as f64 * 0.41 + salt).sin() * 0.8
    })
}

/// Adds a visible offset to the first gradient entry, so a check that would
/// pass must now fail. Used as a negative control: if the harness still
/// reports success with a corrupted gradient, the harness itself is broken.
fn corrupt_first_entry(grads: &mut impl TensorSet) {
    let mut done = false;
    grads.visit_mut(&mut |_, data| {
        if !done {
            if let Some(v) = data.first_mut() {
                *v += 0.05;
                done = true;
            }
        }
    });
}

/// Runs every model-level check. `corrupt` deliberately breaks each analytic
/// gradient first; callers use it to prove the checks can fail.
pub fn run_model_gradchecks(seed: u64, corrupt: bool) -> Vec<NamedReport> {
    let mut out = Vec::new();
    classifier_checks(seed, corrupt, &mut out);
    tagger_checks(seed, corrupt, &mut out);
    out
}

fn classifier_checks(seed: u64, corrupt: bool, out: &mut Vec<NamedReport>) {
    let cfg = TrainConfig {
        run_seed: seed,
        dropout: Some(0.4),
        ..TrainConfig::default()
    };
    let dim = 4;
    let mut model = build_classifier(dim, &cfg).expect("small classifier");
    let x = fixed_input(5, dim, 0.37);
    // Sample one set of dropout masks, then replay them everywhere so the
    // loss stays a deterministic function of the parameters.
    let mut mask_rng = nn::seeded_rng(seed ^ 0x00d0_ffee, 17);
    let masks = model
        .forward(&x, Pass::Sample(&mut mask_rng))
        .expect("probe pass")
        .masks;

    for (head, label, name) in [
        (TaskHead::Doc, 1u8, "classifier document head"),
        (TaskHead::Sent, 0u8, "classifier sentence head"),
    ] {
        let cache = model.forward(&x, Pass::Replay(&masks)).expect("forward");
        let p = match head {
            TaskHead::Doc => cache.p_doc,
            _ => cache.p_sent,
        };
        let mut grads = model.zero_grads();
        model
            .backward(&cache, head, log_loss_grad(p, label), &mut grads)
            .expect("backward");
        if corrupt {
            corrupt_first_entry(&mut grads);
        }
        let report = grad_check(
            &mut model,
            &grads,
            |m| {
                let c = m.forward(&x, Pass::Replay(&masks)).expect("fd forward");
                let p = match head {
                    TaskHead::Doc => c.p_doc,
                    _ => c.p_sent,
                };
                log_loss(p, label)
            },
            FD_EPSILON,
        );
        out.push(NamedReport {
            component: name.to_string(),
            report,
        });
    }
}

fn tagger_checks(seed: u64, corrupt: bool, out: &mut Vec<NamedReport>) {
    let cfg = TrainConfig {
        run_seed: seed.wrapping_add(1),
        dropout: Some(0.25),
        role_hidden_units: 6,
        ..TrainConfig::default()
    };
    let dim = 4;
    let entity_vocab = 3;
    let tags = 5;
    let mut model = build_tagger(dim, entity_vocab, tags, &cfg).expect("small tagger");
    let t_len = 5;
    let x = fixed_input(t_len, dim, 0.91);
    let mut entities = Array2::zeros((t_len, entity_vocab));
    for t in 0..t_len {
        entities[[t, t % entity_vocab]] = 1.0;
    }
    // Last position masked out, to exercise pooling and loss masking.
    let mask = vec![true, true, true, true, false];
    let tag_ids = vec![1usize, 3, 0, 2, 0];

    let mut mask_rng = nn::seeded_rng(seed ^ 0x7a66_e77a, 23);
    let masks = model
        .forward(&x, &entities, &mask, Pass::Sample(&mut mask_rng))
        .expect("probe pass")
        .masks;

    for (head, label, name) in [
        (TaskHead::Doc, 1u8, "tagger document head"),
        (TaskHead::Sent, 0u8, "tagger sentence head"),
    ] {
        let cache = model
            .forward(&x, &entities, &mask, Pass::Replay(&masks))
            .expect("forward");
        let p = match head {
            TaskHead::Doc => cache.p_doc,
            _ => cache.p_sent,
        };
        let mut grads = model.zero_grads();
        let upstream = match head {
            TaskHead::Doc => TaggerUpstream::Doc(log_loss_grad(p, label)),
            _ => TaggerUpstream::Sent(log_loss_grad(p, label)),
        };
        model.backward(&cache, upstream, &mut grads).expect("backward");
        if corrupt {
            corrupt_first_entry(&mut grads);
        }
        let report = grad_check(
            &mut model,
            &grads,
            |m| {
                let c = m
                    .forward(&x, &entities, &mask, Pass::Replay(&masks))
                    .expect("fd forward");
                let p = match head {
                    TaskHead::Doc => c.p_doc,
                    _ => c.p_sent,
                };
                log_loss(p, label)
            },
            FD_EPSILON,
        );
        out.push(NamedReport {
            component: name.to_string(),
            report,
        });
    }

    let cache = model
        .forward(&x, &entities, &mask, Pass::Replay(&masks))
        .expect("forward");
    let mut grads = model.zero_grads();
    let d_logits =
        masked_cross_entropy_grad(&cache.tag_probs, &tag_ids, &mask).expect("loss grad");
    model
        .backward(&cache, TaggerUpstream::Role(&d_logits), &mut grads)
        .expect("backward");
    if corrupt {
        corrupt_first_entry(&mut grads);
    }
    let report = grad_check(
        &mut model,
        &grads,
        |m| {
            let c = m
                .forward(&x, &entities, &mask, Pass::Replay(&masks))
                .expect("fd forward");
            masked_cross_entropy(&c.tag_probs, &tag_ids, &mask).expect("fd loss")
        },
        FD_EPSILON,
    );
    out.push(NamedReport {
        component: "tagger role branch".to_string(),
        report,
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_model_check_passes() {
        let reports = run_model_gradchecks(3, false);
        assert_eq!(reports.len(), 5);
        for r in &reports {
            assert!(
                r.passes(),
                "{} failed: max relative error {:.3e}",
                r.component,
                r.report.max_relative_error()
            );
        }
    }

    #[test]
    fn corrupted_gradients_are_caught() {
        let reports = run_model_gradchecks(3, true);
        for r in &reports {
            assert!(
                !r.passes(),
                "{} still passed with a corrupted gradient",
                r.component
            );
        }
    }
}
