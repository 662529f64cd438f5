//! Evaluation metrics: binary classification scores, token-level tagging
//! scores (per tag and with B-/I- prefixes merged per role), and exact-span
//! scores.
//!
//! Degenerate denominators score 0 rather than erroring: a head that never
//! predicts a positive has precision 0, a class with no gold instances has
//! recall 0, and averages over nothing are 0. Only structural problems
//! (misaligned inputs) are errors.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("metrics input mismatch: {0}")]
    LengthMismatch(String),
}

/// Precision, recall, F1, and the gold support they were computed over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrfReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

fn ratio(num: usize, denom: usize) -> f64 {
    if denom == 0 {
        0.0
    } else {
        num as f64 / denom as f64
    }
}

/// P/R/F1 from raw counts; any zero denominator (including P + R = 0 for F1)
/// gives 0.
pub fn prf(tp: usize, fp: usize, fn_: usize) -> PrfReport {
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    PrfReport {
        precision,
        recall,
        f1,
        support: tp + fn_,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Total examples scored.
    pub support: usize,
    /// Gold positives among them.
    pub positives: usize,
    /// Counts indexed `[gold][predicted]`, so `confusion[1][0]` is a miss.
    pub confusion: [[usize; 2]; 2],
    /// Row-normalized rates; `None` where the gold class has no examples.
    pub confusion_rates: [[Option<f64>; 2]; 2],
}

/// Scores binary predictions against gold labels (both 0 or 1).
pub fn classification_report(
    pred: &[u8],
    gold: &[u8],
) -> Result<ClassificationReport, MetricsError> {
    if pred.len() != gold.len() {
        return Err(MetricsError::LengthMismatch(format!(
            "{} predictions vs {} gold labels",
            pred.len(),
            gold.len()
        )));
    }
    let mut confusion = [[0usize; 2]; 2];
    for (&p, &g) in pred.iter().zip(gold.iter()) {
        if p > 1 || g > 1 {
            return Err(MetricsError::LengthMismatch(format!(
                "labels must be 0 or 1, got predicted {p} / gold {g}"
            )));
        }
        confusion[g as usize][p as usize] += 1;
    }
    let tp = confusion[1][1];
    let fp = confusion[0][1];
    let fn_ = confusion[1][0];
    let tn = confusion[0][0];
    let scores = prf(tp, fp, fn_);
    let mut confusion_rates = [[None; 2]; 2];
    for g in 0..2 {
        let row_total = confusion[g][0] + confusion[g][1];
        if row_total > 0 {
            for p in 0..2 {
                confusion_rates[g][p] = Some(confusion[g][p] as f64 / row_total as f64);
            }
        }
    }
    Ok(ClassificationReport {
        accuracy: ratio(tp + tn, pred.len()),
        precision: scores.precision,
        recall: scores.recall,
        f1: scores.f1,
        support: pred.len(),
        positives: tp + fn_,
        confusion,
        confusion_rates,
    })
}

/// A labeled span: `start..=end` token positions carrying one role.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Span {
    pub role: String,
    pub start: usize,
    pub end: usize,
}

/// Reads spans out of an IOB sequence leniently: a span opens at `B-role`,
/// or at an `I-role` that does not continue one (stray continuations still
/// denote a mention; dropping them would understate recall).
pub fn extract_spans(tags: &[String]) -> Vec<Span> {
    let mut spans = Vec::new();
    let mut open: Option<(String, usize)> = None;
    for (t, tag) in tags.iter().enumerate() {
        let (starts, role) = if let Some(role) = tag.strip_prefix("B-") {
            (true, Some(role))
        } else if let Some(role) = tag.strip_prefix("I-") {
            let continues = matches!(&open, Some((r, _)) if r == role);
            (!continues, Some(role))
        } else {
            (false, None)
        };
        match role {
            Some(role) => {
                if starts {
                    if let Some((r, s)) = open.take() {
                        spans.push(Span { role: r, start: s, end: t - 1 });
                    }
                    open = Some((role.to_string(), t));
                }
            }
            None => {
                if let Some((r, s)) = open.take() {
                    spans.push(Span { role: r, start: s, end: t - 1 });
                }
            }
        }
    }
    if let Some((r, s)) = open {
        spans.push(Span { role: r, start: s, end: tags.len() - 1 });
    }
    spans
}

fn role_of(tag: &str) -> Option<&str> {
    tag.strip_prefix("B-").or_else(|| tag.strip_prefix("I-"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggingReport {
    /// Fraction of positions tagged exactly right, `O` included.
    pub token_accuracy: f64,
    /// Support-weighted average over tags with gold support (`O` excluded
    /// unless the report was built with `include_o`).
    pub weighted: PrfReport,
    /// Token-level scores per tag, for every tag seen in gold or predictions.
    pub per_tag: BTreeMap<String, PrfReport>,
    /// Token-level scores per role, B- and I- merged.
    pub per_role: BTreeMap<String, PrfReport>,
    pub role_weighted: PrfReport,
    /// Exact-match span scores, micro-averaged over all sentences.
    pub spans: PrfReport,
}

/// Scores predicted tag sequences against gold, sentence-aligned.
/// `include_o` adds `O` to the weighted average (it always appears in
/// `per_tag` and never in role or span scores).
pub fn tagging_report(
    pred: &[Vec<String>],
    gold: &[Vec<String>],
    include_o: bool,
) -> Result<TaggingReport, MetricsError> {
    if pred.len() != gold.len() {
        return Err(MetricsError::LengthMismatch(format!(
            "{} predicted sentences vs {} gold sentences",
            pred.len(),
            gold.len()
        )));
    }
    let mut tag_counts: BTreeMap<String, (usize, usize, usize)> = BTreeMap::new();
    let mut role_counts: BTreeMap<String, (usize, usize, usize)> = BTreeMap::new();
    let mut correct = 0usize;
    let mut total = 0usize;
    let (mut span_tp, mut span_pred, mut span_gold) = (0usize, 0usize, 0usize);

    for (i, (p_sent, g_sent)) in pred.iter().zip(gold.iter()).enumerate() {
        if p_sent.len() != g_sent.len() {
            return Err(MetricsError::LengthMismatch(format!(
                "sentence {i}: {} predicted tags vs {} gold tags",
                p_sent.len(),
                g_sent.len()
            )));
        }
        for (p, g) in p_sent.iter().zip(g_sent.iter()) {
            total += 1;
            if p == g {
                correct += 1;
            }
            // One-vs-all per tag name.
            if p == g {
                tag_counts.entry(g.clone()).or_default().0 += 1;
            } else {
                tag_counts.entry(p.clone()).or_default().1 += 1;
                tag_counts.entry(g.clone()).or_default().2 += 1;
            }
            // Same, with B-/I- collapsed to the role.
            let p_role = role_of(p);
            let g_role = role_of(g);
            match (p_role, g_role) {
                (Some(pr), Some(gr)) if pr == gr => {
                    role_counts.entry(gr.to_string()).or_default().0 += 1;
                }
                _ => {
                    if let Some(pr) = p_role {
                        role_counts.entry(pr.to_string()).or_default().1 += 1;
                    }
                    if let Some(gr) = g_role {
                        role_counts.entry(gr.to_string()).or_default().2 += 1;
                    }
                }
            }
        }
        let p_spans: BTreeSet<Span> = extract_spans(p_sent).into_iter().collect();
        let g_spans: BTreeSet<Span> = extract_spans(g_sent).into_iter().collect();
        span_tp += p_spans.intersection(&g_spans).count();
        span_pred += p_spans.len();
        span_gold += g_spans.len();
    }

    let per_tag: BTreeMap<String, PrfReport> = tag_counts
        .iter()
        .map(|(tag, &(tp, fp, fn_))| (tag.clone(), prf(tp, fp, fn_)))
        .collect();
    let per_role: BTreeMap<String, PrfReport> = role_counts
        .iter()
        .map(|(role, &(tp, fp, fn_))| (role.clone(), prf(tp, fp, fn_)))
        .collect();

    let weighted = weighted_average(per_tag.iter().filter(|(tag, _)| include_o || *tag != "O"));
    let role_weighted = weighted_average(per_role.iter());

    Ok(TaggingReport {
        token_accuracy: ratio(correct, total),
        weighted,
        per_tag,
        per_role,
        role_weighted,
        spans: prf(span_tp, span_pred - span_tp, span_gold - span_tp),
    })
}

/// Support-weighted mean of P/R/F1 over classes with gold support.
fn weighted_average<'a>(
    classes: impl Iterator<Item = (&'a String, &'a PrfReport)>,
) -> PrfReport {
    let mut support = 0usize;
    let (mut p, mut r, mut f) = (0.0, 0.0, 0.0);
    for (_, report) in classes {
        if report.support == 0 {
            continue;
        }
        let w = report.support as f64;
        support += report.support;
        p += w * report.precision;
        r += w * report.recall;
        f += w * report.f1;
    }
    if support == 0 {
        return PrfReport { precision: 0.0, recall: 0.0, f1: 0.0, support: 0 };
    }
    let total = support as f64;
    PrfReport {
        precision: p / total,
        recall: r / total,
        f1: f / total,
        support,
    }
}
