//! Losses: binary log loss for the classification heads and masked
//! categorical cross-entropy for the tag sequences.

use ndarray::Array2;

use super::{shape_mismatch, NnError};

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before any log.
pub const PROB_EPS: f64 = 1e-7;

pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// `-(y ln p + (1-y) ln(1-p))` with clamping.
pub fn log_loss(p: f64, y: u8) -> f64 {
    let p = clamp_prob(p);
    if y == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Gradient of the log loss with respect to the sigmoid *pre-activation*:
/// the usual `p - y` composite.
pub fn log_loss_grad(p: f64, y: u8) -> f64 {
    p - f64::from(y)
}

/// Mean `-ln p[t, tag[t]]` over unmasked positions. `probs` is `T x classes`,
/// rows are softmax outputs. A fully masked sequence contributes zero loss.
pub fn masked_cross_entropy(
    probs: &Array2<f64>,
    tags: &[usize],
    mask: &[bool],
) -> Result<f64, NnError> {
    if tags.len() != probs.nrows() || mask.len() != probs.nrows() {
        return Err(shape_mismatch(
            "masked cross entropy",
            format!("{} tags and mask entries", probs.nrows()),
            format!("{} tags, {} mask entries", tags.len(), mask.len()),
        ));
    }
    let mut total = 0.0;
    let mut n = 0usize;
    for (t, (&tag, &keep)) in tags.iter().zip(mask.iter()).enumerate() {
        if !keep {
            continue;
        }
        if tag >= probs.ncols() {
            return Err(shape_mismatch(
                "masked cross entropy",
                format!("tag ids below {}", probs.ncols()),
                format!("tag {tag} at position {t}"),
            ));
        }
        total -= clamp_prob(probs[[t, tag]]).ln();
        n += 1;
    }
    Ok(if n == 0 { 0.0 } else { total / n as f64 })
}

/// Gradient of [`masked_cross_entropy`] with respect to the softmax
/// *pre-activations*: `(softmax - onehot) / n_unmasked` on unmasked rows,
/// zero elsewhere.
pub fn masked_cross_entropy_grad(
    probs: &Array2<f64>,
    tags: &[usize],
    mask: &[bool],
) -> Result<Array2<f64>, NnError> {
    if tags.len() != probs.nrows() || mask.len() != probs.nrows() {
        return Err(shape_mismatch(
            "masked cross entropy grad",
            format!("{} tags and mask entries", probs.nrows()),
            format!("{} tags, {} mask entries", tags.len(), mask.len()),
        ));
    }
    let n = mask.iter().filter(|&&m| m).count();
    let mut d = Array2::zeros(probs.dim());
    if n == 0 {
        return Ok(d);
    }
    let scale = 1.0 / n as f64;
    for (t, (&tag, &keep)) in tags.iter().zip(mask.iter()).enumerate() {
        if !keep {
            continue;
        }
        for j in 0..probs.ncols() {
            let y = if j == tag { 1.0 } else { 0.0 };
            d[[t, j]] = (probs[[t, j]] - y) * scale;
        }
    }
    Ok(d)
}
