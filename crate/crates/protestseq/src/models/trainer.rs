//! Multitask training loop shared by both architectures.
//!
//! One epoch runs `batches_per_task` rounds. Each round draws one batch per
//! task, in the fixed order document, sentence, role (the role task only on
//! the tagger), and applies an RMSProp update restricted to the layers the
//! task actually feeds. Batches sample without replacement, reshuffling the
//! index order whenever it runs out and at every epoch start.
//!
//! Everything stochastic (shuffles, batch draws, dropout masks) comes from a
//! single ChaCha stream derived from `run_seed`, consumed in a documented
//! fixed order, so a run is reproducible bit for bit.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{pad_sequence, PaddingSide, PaddingSpec};
use crate::embeddings::Embedder;
use crate::nn::{
    self, log_loss, log_loss_grad, masked_cross_entropy, masked_cross_entropy_grad, RmsProp,
    TensorSet,
};

use super::{
    AnyModel, ClassifierModel, ModelError, Pass, TaggerModel, TaggerUpstream, TaskHead,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batches_per_task: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub rmsprop_decay: f64,
    pub rmsprop_epsilon: f64,
    /// `None` picks the architecture default: 0.5 for the classifier, 0.25
    /// for the tagger.
    pub dropout: Option<f64>,
    pub run_seed: u64,
    /// Decision threshold for the sigmoid heads.
    pub threshold: f64,
    /// Total classifier recurrent width; must stay at 10.
    pub classifier_units: usize,
    /// Total shared recurrent width of the tagger; must stay at 20.
    pub tagger_shared_units: usize,
    /// Total width of the role branch's bidirectional layer.
    pub role_hidden_units: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batches_per_task: 20,
            batch_size: 128,
            learning_rate: 0.001,
            rmsprop_decay: 0.9,
            rmsprop_epsilon: 1e-7,
            dropout: None,
            run_seed: 42,
            threshold: 0.5,
            classifier_units: 10,
            tagger_shared_units: 20,
            role_hidden_units: 32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidConfig(msg));
        if self.batches_per_task == 0 {
            return bad("batches_per_task must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.rmsprop_decay) {
            return bad(format!("rmsprop_decay must be in [0, 1), got {}", self.rmsprop_decay));
        }
        if !(self.rmsprop_epsilon.is_finite() && self.rmsprop_epsilon > 0.0) {
            return bad(format!(
                "rmsprop_epsilon must be positive, got {}",
                self.rmsprop_epsilon
            ));
        }
        if let Some(rate) = self.dropout {
            if !(0.0..1.0).contains(&rate) {
                return bad(format!("dropout must be in [0, 1), got {rate}"));
            }
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return bad(format!("threshold must be in [0, 1], got {}", self.threshold));
        }
        Ok(())
    }

    pub fn dropout_for_classifier(&self) -> f64 {
        self.dropout.unwrap_or(0.5)
    }

    pub fn dropout_for_tagger(&self) -> f64 {
        self.dropout.unwrap_or(0.25)
    }
}

/// One labeled document or sentence, already tokenized.
#[derive(Debug, Clone)]
pub struct ClassExample {
    pub tokens: Vec<String>,
    pub label: u8,
}

/// One role-labeled sentence: per-token tag ids (into the tag vocabulary)
/// and entity ids (into the entity vocabulary).
#[derive(Debug, Clone)]
pub struct RoleExample {
    pub tokens: Vec<String>,
    pub tag_ids: Vec<usize>,
    pub entity_ids: Vec<usize>,
}

/// Training data for up to three tasks. `role` stays empty for the
/// classifier.
#[derive(Debug, Clone, Default)]
pub struct TaskData {
    pub doc: Vec<ClassExample>,
    pub sent: Vec<ClassExample>,
    pub role: Vec<RoleExample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub doc_loss: f64,
    pub sent_loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role_loss: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochSummary>,
    /// Length every training sequence was padded to, shared by all tasks of
    /// the run. Inference must pad to the same length to see the dynamics
    /// the parameters were fit under; checkpoints carry it for that reason.
    #[serde(default)]
    pub pad_length: usize,
}

/// Which tensors a task is allowed to update on the classifier.
pub(crate) fn classifier_task_allows(head: TaskHead, name: &str) -> bool {
    match head {
        TaskHead::Doc => name.starts_with("recurrent.") || name.starts_with("head_doc."),
        TaskHead::Sent => name.starts_with("recurrent.") || name.starts_with("head_sent."),
        TaskHead::Role => false,
    }
}

/// Which tensors a task is allowed to update on the tagger. Every task
/// reaches the shared layer; only the role task reaches the role branch.
pub(crate) fn tagger_task_allows(head: TaskHead, name: &str) -> bool {
    match head {
        TaskHead::Doc => name.starts_with("shared.") || name.starts_with("head_doc."),
        TaskHead::Sent => name.starts_with("shared.") || name.starts_with("head_sent."),
        TaskHead::Role => {
            name.starts_with("shared.")
                || name.starts_with("role_bi.")
                || name.starts_with("role_out.")
        }
    }
}

struct BatchStream {
    order: Vec<usize>,
    pos: usize,
}

impl BatchStream {
    fn new(n: usize) -> Self {
        BatchStream {
            order: (0..n).collect(),
            pos: 0,
        }
    }

    fn reshuffle(&mut self, rng: &mut ChaCha8Rng) {
        self.order.shuffle(rng);
        self.pos = 0;
    }

    /// Draws `size` indices without replacement, reshuffling mid-draw when a
    /// pass over the data runs out.
    fn next_batch(&mut self, size: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut batch = Vec::with_capacity(size);
        for _ in 0..size {
            if self.pos == self.order.len() {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            batch.push(self.order[self.pos]);
            self.pos += 1;
        }
        batch
    }
}

/// Trains `model` in place and reports per-epoch mean batch losses.
pub fn train_multitask(
    model: &mut AnyModel,
    data: &TaskData,
    embedder: &Embedder,
    cfg: &TrainConfig,
) -> Result<TrainHistory, ModelError> {
    cfg.validate()?;
    if model.embedding_dim() != embedder.dim() {
        return Err(ModelError::InvalidConfig(format!(
            "model expects {}-dimensional vectors, embedder provides {}",
            model.embedding_dim(),
            embedder.dim()
        )));
    }
    if data.doc.is_empty() {
        return Err(ModelError::EmptyDataset(TaskHead::Doc));
    }
    if data.sent.is_empty() {
        return Err(ModelError::EmptyDataset(TaskHead::Sent));
    }
    match model {
        AnyModel::Classifier(m) => {
            if !data.role.is_empty() {
                return Err(ModelError::InvalidConfig(
                    "the classifier has no role head; drop the role dataset or train a tagger"
                        .into(),
                ));
            }
            train_classifier(m, data, embedder, cfg)
        }
        AnyModel::Tagger(m) => {
            if data.role.is_empty() {
                return Err(ModelError::MissingDataset(TaskHead::Role));
            }
            train_tagger(m, data, embedder, cfg)
        }
    }
}

/// Longest token sequence across every dataset the run trains on. Tasks
/// share one padded length so a checkpoint has a single inference-time
/// padding rule.
fn shared_pad_target(data: &TaskData) -> usize {
    let class_max = data
        .doc
        .iter()
        .chain(&data.sent)
        .map(|e| e.tokens.len())
        .max()
        .unwrap_or(0);
    let role_max = data.role.iter().map(|e| e.tokens.len()).max().unwrap_or(0);
    class_max.max(role_max)
}

/// Classifier inputs: pre-padded so the forward direction ends right at the
/// last real token. No mask; pad rows embed to zero.
fn prepare_prepadded(
    examples: &[ClassExample],
    embedder: &Embedder,
    target: usize,
) -> Vec<(Array2<f64>, u8)> {
    let spec = PaddingSpec {
        side: PaddingSide::Pre,
        target_length: target,
    };
    examples
        .iter()
        .map(|e| {
            let (padded, _) = pad_sequence(&e.tokens, &spec);
            let embedded = embedder.embed_sequence(&padded, crate::PAD_TOKEN);
            (embedded.matrix, e.label)
        })
        .collect()
}

struct SeqClassEx {
    x: Array2<f64>,
    entities: Array2<f64>,
    mask: Vec<bool>,
    label: u8,
}

struct SeqRoleEx {
    x: Array2<f64>,
    entities: Array2<f64>,
    mask: Vec<bool>,
    tag_ids: Vec<usize>,
}

/// Tagger inputs: post-padded so tag indices line up, masked for pooling
/// and the role loss. Examples with no tokens cannot be pooled and are
/// dropped with a warning.
fn prepare_postpadded(
    examples: &[ClassExample],
    embedder: &Embedder,
    entity_vocab_size: usize,
    head: TaskHead,
    target: usize,
) -> Result<Vec<SeqClassEx>, ModelError> {
    let spec = PaddingSpec {
        side: PaddingSide::Post,
        target_length: target,
    };
    let mut out = Vec::with_capacity(examples.len());
    let mut dropped = 0usize;
    for e in examples {
        if e.tokens.is_empty() {
            dropped += 1;
            continue;
        }
        let (padded, mask) = pad_sequence(&e.tokens, &spec);
        let embedded = embedder.embed_sequence(&padded, crate::PAD_TOKEN);
        out.push(SeqClassEx {
            x: embedded.matrix,
            // No entity features on classification data; the role branch
            // sees all-zero rows.
            entities: Array2::zeros((target, entity_vocab_size)),
            mask,
            label: e.label,
        });
    }
    if dropped > 0 {
        eprintln!("warning: dropped {dropped} empty {head} example(s); nothing to pool over");
    }
    if out.is_empty() {
        return Err(ModelError::EmptyDataset(head));
    }
    Ok(out)
}

fn prepare_role(
    examples: &[RoleExample],
    embedder: &Embedder,
    entity_vocab_size: usize,
    tag_count: usize,
    target: usize,
) -> Result<Vec<SeqRoleEx>, ModelError> {
    let spec = PaddingSpec {
        side: PaddingSide::Post,
        target_length: target,
    };
    let mut out = Vec::with_capacity(examples.len());
    let mut dropped = 0usize;
    for (i, e) in examples.iter().enumerate() {
        if e.tag_ids.len() != e.tokens.len() || e.entity_ids.len() != e.tokens.len() {
            return Err(ModelError::BadExample(format!(
                "role example {i}: {} tokens but {} tags and {} entity ids",
                e.tokens.len(),
                e.tag_ids.len(),
                e.entity_ids.len()
            )));
        }
        if let Some(&tag) = e.tag_ids.iter().find(|&&t| t >= tag_count) {
            return Err(ModelError::BadExample(format!(
                "role example {i}: tag id {tag} outside the {tag_count}-tag vocabulary"
            )));
        }
        if let Some(&ent) = e.entity_ids.iter().find(|&&id| id >= entity_vocab_size) {
            return Err(ModelError::BadExample(format!(
                "role example {i}: entity id {ent} outside the {entity_vocab_size}-entry vocabulary"
            )));
        }
        if e.tokens.is_empty() {
            dropped += 1;
            continue;
        }
        let (padded, mask) = pad_sequence(&e.tokens, &spec);
        let embedded = embedder.embed_sequence(&padded, crate::PAD_TOKEN);
        let mut entities = Array2::zeros((target, entity_vocab_size));
        for (t, &id) in e.entity_ids.iter().enumerate().take(target) {
            entities[[t, id]] = 1.0;
        }
        let mut tag_ids = e.tag_ids.clone();
        tag_ids.resize(target, 0);
        tag_ids.truncate(target);
        out.push(SeqRoleEx {
            x: embedded.matrix,
            entities,
            mask,
            tag_ids,
        });
    }
    if dropped > 0 {
        eprintln!("warning: dropped {dropped} empty role example(s); nothing to pool over");
    }
    if out.is_empty() {
        return Err(ModelError::EmptyDataset(TaskHead::Role));
    }
    Ok(out)
}

fn train_classifier(
    model: &mut ClassifierModel,
    data: &TaskData,
    embedder: &Embedder,
    cfg: &TrainConfig,
) -> Result<TrainHistory, ModelError> {
    let target = shared_pad_target(data);
    let doc = prepare_prepadded(&data.doc, embedder, target);
    let sent = prepare_prepadded(&data.sent, embedder, target);
    let mut rng = nn::seeded_rng(cfg.run_seed, nn::streams::TRAIN);
    let mut opt = RmsProp::new(cfg.learning_rate, cfg.rmsprop_decay, cfg.rmsprop_epsilon)?;
    let mut grads = model.zero_grads();
    let mut doc_stream = BatchStream::new(doc.len());
    let mut sent_stream = BatchStream::new(sent.len());
    let mut history = TrainHistory {
        pad_length: target,
        ..TrainHistory::default()
    };
    for _ in 0..cfg.epochs {
        doc_stream.reshuffle(&mut rng);
        sent_stream.reshuffle(&mut rng);
        let mut doc_sum = 0.0;
        let mut sent_sum = 0.0;
        for _ in 0..cfg.batches_per_task {
            doc_sum += classifier_batch(
                model,
                &doc,
                &mut doc_stream,
                TaskHead::Doc,
                &mut grads,
                &mut opt,
                &mut rng,
                cfg,
            )?;
            sent_sum += classifier_batch(
                model,
                &sent,
                &mut sent_stream,
                TaskHead::Sent,
                &mut grads,
                &mut opt,
                &mut rng,
                cfg,
            )?;
        }
        let denom = cfg.batches_per_task as f64;
        history.epochs.push(EpochSummary {
            doc_loss: doc_sum / denom,
            sent_loss: sent_sum / denom,
            role_loss: None,
        });
    }
    Ok(history)
}

#[allow(clippy::too_many_arguments)]
fn classifier_batch(
    model: &mut ClassifierModel,
    examples: &[(Array2<f64>, u8)],
    stream: &mut BatchStream,
    head: TaskHead,
    grads: &mut super::ClassifierGrads,
    opt: &mut RmsProp,
    rng: &mut ChaCha8Rng,
    cfg: &TrainConfig,
) -> Result<f64, ModelError> {
    let batch = stream.next_batch(cfg.batch_size, rng);
    grads.zero_all();
    let scale = 1.0 / batch.len() as f64;
    let mut loss_sum = 0.0;
    for &i in &batch {
        let (x, label) = &examples[i];
        let cache = model.forward(x, Pass::Sample(rng))?;
        let p = match head {
            TaskHead::Doc => cache.p_doc,
            TaskHead::Sent => cache.p_sent,
            TaskHead::Role => unreachable!("classifier batches are doc or sent"),
        };
        loss_sum += log_loss(p, *label);
        model.backward(&cache, head, log_loss_grad(p, *label) * scale, grads)?;
    }
    opt.step_filtered(model, grads, |name| classifier_task_allows(head, name));
    Ok(loss_sum * scale)
}

fn train_tagger(
    model: &mut TaggerModel,
    data: &TaskData,
    embedder: &Embedder,
    cfg: &TrainConfig,
) -> Result<TrainHistory, ModelError> {
    let entity_vocab = model.entity_vocab_size();
    let target = shared_pad_target(data);
    let doc = prepare_postpadded(&data.doc, embedder, entity_vocab, TaskHead::Doc, target)?;
    let sent = prepare_postpadded(&data.sent, embedder, entity_vocab, TaskHead::Sent, target)?;
    let role = prepare_role(&data.role, embedder, entity_vocab, model.tag_count(), target)?;
    let mut rng = nn::seeded_rng(cfg.run_seed, nn::streams::TRAIN);
    let mut opt = RmsProp::new(cfg.learning_rate, cfg.rmsprop_decay, cfg.rmsprop_epsilon)?;
    let mut grads = model.zero_grads();
    let mut doc_stream = BatchStream::new(doc.len());
    let mut sent_stream = BatchStream::new(sent.len());
    let mut role_stream = BatchStream::new(role.len());
    let mut history = TrainHistory {
        pad_length: target,
        ..TrainHistory::default()
    };
    for _ in 0..cfg.epochs {
        doc_stream.reshuffle(&mut rng);
        sent_stream.reshuffle(&mut rng);
        role_stream.reshuffle(&mut rng);
        let mut doc_sum = 0.0;
        let mut sent_sum = 0.0;
        let mut role_sum = 0.0;
        for _ in 0..cfg.batches_per_task {
            doc_sum += tagger_class_batch(
                model,
                &doc,
                &mut doc_stream,
                TaskHead::Doc,
                &mut grads,
                &mut opt,
                &mut rng,
                cfg,
            )?;
            sent_sum += tagger_class_batch(
                model,
                &sent,
                &mut sent_stream,
                TaskHead::Sent,
                &mut grads,
                &mut opt,
                &mut rng,
                cfg,
            )?;
            role_sum += tagger_role_batch(
                model,
                &role,
                &mut role_stream,
                &mut grads,
                &mut opt,
                &mut rng,
                cfg,
            )?;
        }
        let denom = cfg.batches_per_task as f64;
        history.epochs.push(EpochSummary {
            doc_loss: doc_sum / denom,
            sent_loss: sent_sum / denom,
            role_loss: Some(role_sum / denom),
        });
    }
    Ok(history)
}

#[allow(clippy::too_many_arguments)]
fn tagger_class_batch(
    model: &mut TaggerModel,
    examples: &[SeqClassEx],
    stream: &mut BatchStream,
    head: TaskHead,
    grads: &mut super::TaggerGrads,
    opt: &mut RmsProp,
    rng: &mut ChaCha8Rng,
    cfg: &TrainConfig,
) -> Result<f64, ModelError> {
    let batch = stream.next_batch(cfg.batch_size, rng);
    grads.zero_all();
    let scale = 1.0 / batch.len() as f64;
    let mut loss_sum = 0.0;
    for &i in &batch {
        let ex = &examples[i];
        let cache = model.forward(&ex.x, &ex.entities, &ex.mask, Pass::Sample(rng))?;
        let (p, upstream) = match head {
            TaskHead::Doc => (cache.p_doc, TaggerUpstream::Doc(
                log_loss_grad(cache.p_doc, ex.label) * scale,
            )),
            TaskHead::Sent => (cache.p_sent, TaggerUpstream::Sent(
                log_loss_grad(cache.p_sent, ex.label) * scale,
            )),
            TaskHead::Role => unreachable!("role batches use tagger_role_batch"),
        };
        loss_sum += log_loss(p, ex.label);
        model.backward(&cache, upstream, grads)?;
    }
    opt.step_filtered(model, grads, |name| tagger_task_allows(head, name));
    Ok(loss_sum * scale)
}

fn tagger_role_batch(
    model: &mut TaggerModel,
    examples: &[SeqRoleEx],
    stream: &mut BatchStream,
    grads: &mut super::TaggerGrads,
    opt: &mut RmsProp,
    rng: &mut ChaCha8Rng,
    cfg: &TrainConfig,
) -> Result<f64, ModelError> {
    let batch = stream.next_batch(cfg.batch_size, rng);
    grads.zero_all();
    let scale = 1.0 / batch.len() as f64;
    let mut loss_sum = 0.0;
    for &i in &batch {
        let ex = &examples[i];
        let cache = model.forward(&ex.x, &ex.entities, &ex.mask, Pass::Sample(rng))?;
        loss_sum += masked_cross_entropy(&cache.tag_probs, &ex.tag_ids, &ex.mask)?;
        let mut d_logits = masked_cross_entropy_grad(&cache.tag_probs, &ex.tag_ids, &ex.mask)?;
        d_logits.mapv_inplace(|v| v * scale);
        model.backward(&cache, TaggerUpstream::Role(&d_logits), grads)?;
    }
    opt.step_filtered(model, grads, |name| {
        tagger_task_allows(TaskHead::Role, name)
    });
    Ok(loss_sum * scale)
}
