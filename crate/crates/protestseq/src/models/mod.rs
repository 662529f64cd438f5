//! The two architectures and their training machinery.
//!
//! Classifier: embedded tokens -> input dropout -> bidirectional LSTM
//! (identity candidate/output activations, final-state mode, width 10) ->
//! feature dropout -> two independent sigmoid heads (document, sentence).
//!
//! Tagger: embedded tokens -> input dropout -> shared bidirectional GRU
//! (tanh, sequence mode, width 20) -> dropout -> masked max-over-time ->
//! the same two sigmoid heads; plus a role branch that concatenates the
//! shared sequence with the word vectors and entity one-hots, runs a second
//! bidirectional GRU, dropout, and a unidirectional GRU whose per-step
//! states are softmaxed into IOB tag probabilities.
//!
//! Both models train with the same multitask loop (`trainer`): per epoch, a
//! fixed number of rounds, each visiting the tasks in a fixed order and
//! updating only the layers the task touches.

pub mod trainer;
pub mod verify;

use ndarray::{s, Array1, Array2};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::TagVocabulary;
use crate::nn::{
    self, apply_mask, sample_mask, softmax, temporal_max_pool, temporal_max_pool_backward,
    Activation, BiGru, BiGruCache, BiLstm, BiLstmCache, DenseCache, DenseParams, GruParams,
    GruSeqCache, NnError, TensorSet,
};

pub use trainer::{
    train_multitask, ClassExample, EpochSummary, RoleExample, TaskData, TrainConfig, TrainHistory,
};

/// Total recurrent output width of the classifier, fixed by design.
pub const CLASSIFIER_FEATURE_WIDTH: usize = 10;
/// Total width of the tagger's shared recurrent layer, fixed by design.
pub const TAGGER_SHARED_WIDTH: usize = 20;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("model has no {0} head")]
    NoSuchHead(TaskHead),
    #[error("missing dataset for {0} task")]
    MissingDataset(TaskHead),
    #[error("empty dataset for {0} task")]
    EmptyDataset(TaskHead),
    #[error("bad example: {0}")]
    BadExample(String),
}

/// The three training tasks / output heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskHead {
    Doc,
    Sent,
    Role,
}

impl std::fmt::Display for TaskHead {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TaskHead::Doc => "document",
            TaskHead::Sent => "sentence",
            TaskHead::Role => "role",
        })
    }
}

/// How a forward pass treats dropout: skip it, sample fresh masks, or replay
/// masks recorded by an earlier pass (for gradient checking).
pub enum Pass<'a, M> {
    Infer,
    Sample(&'a mut ChaCha8Rng),
    Replay(&'a M),
}

// ---------------------------------------------------------------------------
// Classifier
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct ClassifierModel {
    pub recurrent: BiLstm,
    pub head_doc: DenseParams,
    pub head_sent: DenseParams,
    /// Applied to the input matrix and to the recurrent feature vector.
    pub dropout: f64,
}

/// Gradient container for [`ClassifierModel`]; visits the same tensor names.
#[derive(Debug, Clone)]
pub struct ClassifierGrads {
    pub recurrent: BiLstm,
    pub head_doc: DenseParams,
    pub head_sent: DenseParams,
}

/// Dropout multiplier masks from one stochastic forward pass.
#[derive(Debug, Clone, Default)]
pub struct ClassifierMasks {
    pub input: Option<Array2<f64>>,
    pub feature: Option<Array1<f64>>,
}

pub struct ClassifierCache {
    pub masks: ClassifierMasks,
    rec_cache: BiLstmCache,
    cache_doc: DenseCache,
    cache_sent: DenseCache,
    pub p_doc: f64,
    pub p_sent: f64,
}

impl ClassifierModel {
    pub fn embedding_dim(&self) -> usize {
        self.recurrent.input_dim()
    }

    /// `x` is `T x embedding_dim` (already padded and embedded).
    pub fn forward(
        &self,
        x: &Array2<f64>,
        pass: Pass<'_, ClassifierMasks>,
    ) -> Result<ClassifierCache, ModelError> {
        let masks = match pass {
            Pass::Infer => ClassifierMasks::default(),
            Pass::Replay(m) => m.clone(),
            Pass::Sample(rng) => {
                if self.dropout > 0.0 {
                    // Draw order is part of the training determinism contract:
                    // input mask first, then feature mask.
                    ClassifierMasks {
                        input: Some(sample_mask(x.dim(), self.dropout, rng)),
                        feature: Some(sample_mask(
                            CLASSIFIER_FEATURE_WIDTH,
                            self.dropout,
                            rng,
                        )),
                    }
                } else {
                    ClassifierMasks::default()
                }
            }
        };
        let x_drop = apply_mask(x, masks.input.as_ref());
        let (feature, rec_cache) = self.recurrent.run_final_cached(&x_drop)?;
        let feature = apply_mask(&feature, masks.feature.as_ref());
        let (y_doc, cache_doc) = self.head_doc.forward(&feature)?;
        let (y_sent, cache_sent) = self.head_sent.forward(&feature)?;
        Ok(ClassifierCache {
            masks,
            rec_cache,
            cache_doc,
            cache_sent,
            p_doc: y_doc[0],
            p_sent: y_sent[0],
        })
    }

    /// Document and sentence probabilities without dropout.
    pub fn infer(&self, x: &Array2<f64>) -> Result<(f64, f64), ModelError> {
        let cache = self.forward(x, Pass::Infer)?;
        Ok((cache.p_doc, cache.p_sent))
    }

    /// Accumulates gradients for one head given `d_z`, the loss derivative at
    /// the head's sigmoid pre-activation (`p - y` for log loss).
    pub fn backward(
        &self,
        cache: &ClassifierCache,
        head: TaskHead,
        d_z: f64,
        grads: &mut ClassifierGrads,
    ) -> Result<(), ModelError> {
        let (dense, dense_cache, dense_grads) = match head {
            TaskHead::Doc => (&self.head_doc, &cache.cache_doc, &mut grads.head_doc),
            TaskHead::Sent => (&self.head_sent, &cache.cache_sent, &mut grads.head_sent),
            TaskHead::Role => return Err(ModelError::NoSuchHead(TaskHead::Role)),
        };
        let d_feature =
            dense.backward_preact(dense_cache, &Array1::from(vec![d_z]), dense_grads);
        let d_feature = apply_mask(&d_feature, cache.masks.feature.as_ref());
        // Gradient on the (frozen) embeddings is discarded.
        self.recurrent
            .backward_final(&cache.rec_cache, &d_feature, &mut grads.recurrent)?;
        Ok(())
    }

    pub fn zero_grads(&self) -> ClassifierGrads {
        ClassifierGrads {
            recurrent: self.recurrent.zeros_like(),
            head_doc: self.head_doc.zeros_like(),
            head_sent: self.head_sent.zeros_like(),
        }
    }
}

fn visit_classifier_parts(
    recurrent: &BiLstm,
    head_doc: &DenseParams,
    head_sent: &DenseParams,
    f: &mut dyn FnMut(&str, &[f64]),
) {
    nn::params::visit_prefixed(recurrent, "recurrent", f);
    nn::params::visit_prefixed(head_doc, "head_doc", f);
    nn::params::visit_prefixed(head_sent, "head_sent", f);
}

fn visit_classifier_parts_mut(
    recurrent: &mut BiLstm,
    head_doc: &mut DenseParams,
    head_sent: &mut DenseParams,
    f: &mut dyn FnMut(&str, &mut [f64]),
) {
    nn::params::visit_prefixed_mut(recurrent, "recurrent", f);
    nn::params::visit_prefixed_mut(head_doc, "head_doc", f);
    nn::params::visit_prefixed_mut(head_sent, "head_sent", f);
}

impl TensorSet for ClassifierModel {
    fn visit(&self, f: &mut dyn FnMut(&str, &[f64])) {
        visit_classifier_parts(&self.recurrent, &self.head_doc, &self.head_sent, f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        visit_classifier_parts_mut(&mut self.recurrent, &mut self.head_doc, &mut self.head_sent, f);
    }
}

impl TensorSet for ClassifierGrads {
    fn visit(&self, f: &mut dyn FnMut(&str, &[f64])) {
        visit_classifier_parts(&self.recurrent, &self.head_doc, &self.head_sent, f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        visit_classifier_parts_mut(&mut self.recurrent, &mut self.head_doc, &mut self.head_sent, f);
    }
}

// ---------------------------------------------------------------------------
// Tagger
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct TaggerModel {
    pub shared: BiGru,
    pub head_doc: DenseParams,
    pub head_sent: DenseParams,
    pub role_bi: BiGru,
    pub role_out: GruParams,
    pub dropout: f64,
}

#[derive(Debug, Clone)]
pub struct TaggerGrads {
    pub shared: BiGru,
    pub head_doc: DenseParams,
    pub head_sent: DenseParams,
    pub role_bi: BiGru,
    pub role_out: GruParams,
}

#[derive(Debug, Clone, Default)]
pub struct TaggerMasks {
    pub input: Option<Array2<f64>>,
    pub shared_out: Option<Array2<f64>>,
    pub role_mid: Option<Array2<f64>>,
}

pub struct TaggerCache {
    pub masks: TaggerMasks,
    shared_cache: BiGruCache,
    shared_seq_drop: Array2<f64>,
    pool_args: Vec<usize>,
    cache_doc: DenseCache,
    cache_sent: DenseCache,
    role_cache: BiGruCache,
    out_cache: GruSeqCache,
    /// `T x tag_count`, softmax rows.
    pub tag_probs: Array2<f64>,
    pub p_doc: f64,
    pub p_sent: f64,
}

/// Upstream gradient for [`TaggerModel::backward`]: a scalar at a sigmoid
/// head's pre-activation, or a matrix at the output GRU's hidden states
/// (the softmax pre-activations).
pub enum TaggerUpstream<'a> {
    Doc(f64),
    Sent(f64),
    Role(&'a Array2<f64>),
}

impl TaggerModel {
    pub fn embedding_dim(&self) -> usize {
        self.shared.input_dim()
    }

    pub fn entity_vocab_size(&self) -> usize {
        self.role_bi.input_dim() - TAGGER_SHARED_WIDTH - self.embedding_dim()
    }

    pub fn tag_count(&self) -> usize {
        self.role_out.units()
    }

    /// `x` is `T x embedding_dim`, `entities` is `T x entity_vocab`, `mask`
    /// is `true` on real tokens. At least one position must be unmasked
    /// (pooling needs a winner).
    pub fn forward(
        &self,
        x: &Array2<f64>,
        entities: &Array2<f64>,
        mask: &[bool],
        pass: Pass<'_, TaggerMasks>,
    ) -> Result<TaggerCache, ModelError> {
        let t_len = x.nrows();
        if entities.nrows() != t_len || mask.len() != t_len {
            return Err(ModelError::BadExample(format!(
                "misaligned example: {} embedding rows, {} entity rows, {} mask entries",
                t_len,
                entities.nrows(),
                mask.len()
            )));
        }
        if entities.ncols() != self.entity_vocab_size() {
            return Err(ModelError::BadExample(format!(
                "entity one-hots have {} columns, model expects {}",
                entities.ncols(),
                self.entity_vocab_size()
            )));
        }
        let masks = match pass {
            Pass::Infer => TaggerMasks::default(),
            Pass::Replay(m) => m.clone(),
            Pass::Sample(rng) => {
                if self.dropout > 0.0 {
                    // Fixed draw order: input, shared output, role midlayer.
                    TaggerMasks {
                        input: Some(sample_mask(x.dim(), self.dropout, rng)),
                        shared_out: Some(sample_mask(
                            (t_len, TAGGER_SHARED_WIDTH),
                            self.dropout,
                            rng,
                        )),
                        role_mid: Some(sample_mask(
                            (t_len, self.role_bi.output_width()),
                            self.dropout,
                            rng,
                        )),
                    }
                } else {
                    TaggerMasks::default()
                }
            }
        };

        let x_drop = apply_mask(x, masks.input.as_ref());
        let (shared_seq, shared_cache) = self.shared.run_sequence_cached(&x_drop)?;
        let shared_seq_drop = apply_mask(&shared_seq, masks.shared_out.as_ref());

        let (pooled, pool_args) = temporal_max_pool(&shared_seq_drop, mask)?;
        let (y_doc, cache_doc) = self.head_doc.forward(&pooled)?;
        let (y_sent, cache_sent) = self.head_sent.forward(&pooled)?;

        // Role branch input: shared states, word vectors, entity one-hots,
        // concatenated per timestep.
        let width = self.role_bi.input_dim();
        let dim = self.embedding_dim();
        let mut role_in = Array2::zeros((t_len, width));
        for t in 0..t_len {
            let mut row = role_in.row_mut(t);
            row.slice_mut(s![..TAGGER_SHARED_WIDTH])
                .assign(&shared_seq_drop.row(t));
            row.slice_mut(s![TAGGER_SHARED_WIDTH..TAGGER_SHARED_WIDTH + dim])
                .assign(&x_drop.row(t));
            row.slice_mut(s![TAGGER_SHARED_WIDTH + dim..])
                .assign(&entities.row(t));
        }
        let (role_mid, role_cache) = self.role_bi.run_sequence_cached(&role_in)?;
        let role_mid_drop = apply_mask(&role_mid, masks.role_mid.as_ref());
        let out_cache = self.role_out.run_cached(&role_mid_drop)?;
        let mut tag_probs = Array2::zeros((t_len, self.tag_count()));
        for t in 0..t_len {
            tag_probs
                .row_mut(t)
                .assign(&softmax(&out_cache.h_seq.row(t).to_owned()));
        }

        Ok(TaggerCache {
            masks,
            shared_cache,
            shared_seq_drop,
            pool_args,
            cache_doc,
            cache_sent,
            role_cache,
            out_cache,
            tag_probs,
            p_doc: y_doc[0],
            p_sent: y_sent[0],
        })
    }

    /// Probabilities and tag distribution without dropout.
    pub fn infer(
        &self,
        x: &Array2<f64>,
        entities: &Array2<f64>,
        mask: &[bool],
    ) -> Result<(f64, f64, Array2<f64>), ModelError> {
        let cache = self.forward(x, entities, mask, Pass::Infer)?;
        Ok((cache.p_doc, cache.p_sent, cache.tag_probs))
    }

    pub fn backward(
        &self,
        cache: &TaggerCache,
        upstream: TaggerUpstream<'_>,
        grads: &mut TaggerGrads,
    ) -> Result<(), ModelError> {
        match upstream {
            TaggerUpstream::Doc(d_z) | TaggerUpstream::Sent(d_z) => {
                let (dense, dense_cache, dense_grads) =
                    if matches!(upstream, TaggerUpstream::Doc(_)) {
                        (&self.head_doc, &cache.cache_doc, &mut grads.head_doc)
                    } else {
                        (&self.head_sent, &cache.cache_sent, &mut grads.head_sent)
                    };
                let d_pooled =
                    dense.backward_preact(dense_cache, &Array1::from(vec![d_z]), dense_grads);
                let d_shared_drop = temporal_max_pool_backward(
                    &d_pooled,
                    &cache.pool_args,
                    cache.shared_seq_drop.nrows(),
                );
                self.backward_through_shared(cache, d_shared_drop, grads)
            }
            TaggerUpstream::Role(d_logits) => {
                let d_mid_drop =
                    self.role_out
                        .bptt(&cache.out_cache, d_logits, &mut grads.role_out)?;
                let d_mid = apply_mask(&d_mid_drop, cache.masks.role_mid.as_ref());
                let d_role_in =
                    self.role_bi
                        .backward_sequence(&cache.role_cache, &d_mid, &mut grads.role_bi)?;
                // Only the shared-state slice of the concat feeds trainable
                // layers upstream; word vectors are frozen, one-hots are data.
                let d_shared_drop = d_role_in.slice(s![.., ..TAGGER_SHARED_WIDTH]).to_owned();
                self.backward_through_shared(cache, d_shared_drop, grads)
            }
        }
    }

    fn backward_through_shared(
        &self,
        cache: &TaggerCache,
        d_shared_drop: Array2<f64>,
        grads: &mut TaggerGrads,
    ) -> Result<(), ModelError> {
        let d_shared = apply_mask(&d_shared_drop, cache.masks.shared_out.as_ref());
        self.shared
            .backward_sequence(&cache.shared_cache, &d_shared, &mut grads.shared)?;
        Ok(())
    }

    pub fn zero_grads(&self) -> TaggerGrads {
        TaggerGrads {
            shared: self.shared.zeros_like(),
            head_doc: self.head_doc.zeros_like(),
            head_sent: self.head_sent.zeros_like(),
            role_bi: self.role_bi.zeros_like(),
            role_out: self.role_out.zeros_like(),
        }
    }
}

fn visit_tagger_parts(
    shared: &BiGru,
    head_doc: &DenseParams,
    head_sent: &DenseParams,
    role_bi: &BiGru,
    role_out: &GruParams,
    f: &mut dyn FnMut(&str, &[f64]),
) {
    nn::params::visit_prefixed(shared, "shared", f);
    nn::params::visit_prefixed(head_doc, "head_doc", f);
    nn::params::visit_prefixed(head_sent, "head_sent", f);
    nn::params::visit_prefixed(role_bi, "role_bi", f);
    nn::params::visit_prefixed(role_out, "role_out", f);
}

fn visit_tagger_parts_mut(
    shared: &mut BiGru,
    head_doc: &mut DenseParams,
    head_sent: &mut DenseParams,
    role_bi: &mut BiGru,
    role_out: &mut GruParams,
    f: &mut dyn FnMut(&str, &mut [f64]),
) {
    nn::params::visit_prefixed_mut(shared, "shared", f);
    nn::params::visit_prefixed_mut(head_doc, "head_doc", f);
    nn::params::visit_prefixed_mut(head_sent, "head_sent", f);
    nn::params::visit_prefixed_mut(role_bi, "role_bi", f);
    nn::params::visit_prefixed_mut(role_out, "role_out", f);
}

impl TensorSet for TaggerModel {
    fn visit(&self, f: &mut dyn FnMut(&str, &[f64])) {
        visit_tagger_parts(
            &self.shared,
            &self.head_doc,
            &self.head_sent,
            &self.role_bi,
            &self.role_out,
            f,
        );
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        visit_tagger_parts_mut(
            &mut self.shared,
            &mut self.head_doc,
            &mut self.head_sent,
            &mut self.role_bi,
            &mut self.role_out,
            f,
        );
    }
}

impl TensorSet for TaggerGrads {
    fn visit(&self, f: &mut dyn FnMut(&str, &[f64])) {
        visit_tagger_parts(
            &self.shared,
            &self.head_doc,
            &self.head_sent,
            &self.role_bi,
            &self.role_out,
            f,
        );
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        visit_tagger_parts_mut(
            &mut self.shared,
            &mut self.head_doc,
            &mut self.head_sent,
            &mut self.role_bi,
            &mut self.role_out,
            f,
        );
    }
}

// ---------------------------------------------------------------------------
// Builders, spec, and the AnyModel wrapper
// ---------------------------------------------------------------------------

/// Builds the classifier: bidirectional LSTM with identity candidate/output
/// activations, `classifier_units` total width (must be 10, evenly split),
/// and two sigmoid heads. Weights are seeded from `cfg.run_seed`.
pub fn build_classifier(
    embedding_dim: usize,
    cfg: &TrainConfig,
) -> Result<ClassifierModel, ModelError> {
    cfg.validate()?;
    if embedding_dim == 0 {
        return Err(ModelError::InvalidConfig(
            "embedding dimension must be nonzero".into(),
        ));
    }
    if cfg.classifier_units != CLASSIFIER_FEATURE_WIDTH {
        return Err(ModelError::InvalidConfig(format!(
            "classifier recurrent output width is fixed at {CLASSIFIER_FEATURE_WIDTH} (5 per direction), got {}",
            cfg.classifier_units
        )));
    }
    let per_dir = CLASSIFIER_FEATURE_WIDTH / 2;
    let mut rng = nn::seeded_rng(cfg.run_seed, nn::streams::INIT);
    let lstm = |rng: &mut ChaCha8Rng| {
        nn::init::init_lstm(
            rng,
            per_dir,
            embedding_dim,
            Activation::Identity,
            Activation::Identity,
        )
    };
    Ok(ClassifierModel {
        recurrent: BiLstm {
            fwd: lstm(&mut rng),
            bwd: lstm(&mut rng),
        },
        head_doc: nn::init::init_dense(&mut rng, 1, CLASSIFIER_FEATURE_WIDTH, Activation::Sigmoid),
        head_sent: nn::init::init_dense(&mut rng, 1, CLASSIFIER_FEATURE_WIDTH, Activation::Sigmoid),
        dropout: cfg.dropout_for_classifier(),
    })
}

/// Builds the tagger: shared bidirectional GRU (`tagger_shared_units` total,
/// must be 20), sigmoid heads over its pooled states, and the role branch
/// (`role_hidden_units` total for the middle bidirectional GRU, `tag_count`
/// units for the softmax output GRU).
pub fn build_tagger(
    embedding_dim: usize,
    entity_vocab_size: usize,
    tag_count: usize,
    cfg: &TrainConfig,
) -> Result<TaggerModel, ModelError> {
    cfg.validate()?;
    if embedding_dim == 0 {
        return Err(ModelError::InvalidConfig(
            "embedding dimension must be nonzero".into(),
        ));
    }
    if entity_vocab_size == 0 {
        return Err(ModelError::InvalidConfig(
            "entity vocabulary must be nonempty".into(),
        ));
    }
    if tag_count < 2 {
        return Err(ModelError::InvalidConfig(format!(
            "need at least 2 tags for a softmax output, got {tag_count}"
        )));
    }
    if cfg.tagger_shared_units != TAGGER_SHARED_WIDTH {
        return Err(ModelError::InvalidConfig(format!(
            "tagger shared output width is fixed at {TAGGER_SHARED_WIDTH} (10 per direction), got {}",
            cfg.tagger_shared_units
        )));
    }
    if cfg.role_hidden_units < 2 || cfg.role_hidden_units % 2 != 0 {
        return Err(ModelError::InvalidConfig(format!(
            "role branch hidden width must be even and at least 2, got {}",
            cfg.role_hidden_units
        )));
    }
    let shared_per_dir = TAGGER_SHARED_WIDTH / 2;
    let role_per_dir = cfg.role_hidden_units / 2;
    let role_in_width = TAGGER_SHARED_WIDTH + embedding_dim + entity_vocab_size;
    let mut rng = nn::seeded_rng(cfg.run_seed, nn::streams::INIT);
    Ok(TaggerModel {
        shared: BiGru {
            fwd: nn::init::init_gru(&mut rng, shared_per_dir, embedding_dim, Activation::Tanh),
            bwd: nn::init::init_gru(&mut rng, shared_per_dir, embedding_dim, Activation::Tanh),
        },
        head_doc: nn::init::init_dense(&mut rng, 1, TAGGER_SHARED_WIDTH, Activation::Sigmoid),
        head_sent: nn::init::init_dense(&mut rng, 1, TAGGER_SHARED_WIDTH, Activation::Sigmoid),
        role_bi: BiGru {
            fwd: nn::init::init_gru(&mut rng, role_per_dir, role_in_width, Activation::Tanh),
            bwd: nn::init::init_gru(&mut rng, role_per_dir, role_in_width, Activation::Tanh),
        },
        role_out: nn::init::init_gru(&mut rng, tag_count, cfg.role_hidden_units, Activation::Tanh),
        dropout: cfg.dropout_for_tagger(),
    })
}

/// Architecture and shape description, enough to rebuild a zero-valued model
/// whose tensor walk matches; stored in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "snake_case")]
pub enum ModelSpec {
    Classifier {
        embedding_dim: usize,
        units_per_dir: usize,
        dropout: f64,
    },
    Tagger {
        embedding_dim: usize,
        entity_vocab_size: usize,
        tag_count: usize,
        shared_per_dir: usize,
        role_hidden_per_dir: usize,
        dropout: f64,
    },
}

impl ModelSpec {
    /// A zero-parameter model with this spec's shapes, ready for
    /// `assign_flat` from checkpoint tensor data.
    pub fn build_zero(&self) -> AnyModel {
        match *self {
            ModelSpec::Classifier {
                embedding_dim,
                units_per_dir,
                dropout,
            } => {
                let lstm = || {
                    crate::nn::LstmParams::zeros(
                        units_per_dir,
                        embedding_dim,
                        Activation::Identity,
                        Activation::Identity,
                    )
                };
                AnyModel::Classifier(ClassifierModel {
                    recurrent: BiLstm {
                        fwd: lstm(),
                        bwd: lstm(),
                    },
                    head_doc: DenseParams::zeros(1, 2 * units_per_dir, Activation::Sigmoid),
                    head_sent: DenseParams::zeros(1, 2 * units_per_dir, Activation::Sigmoid),
                    dropout,
                })
            }
            ModelSpec::Tagger {
                embedding_dim,
                entity_vocab_size,
                tag_count,
                shared_per_dir,
                role_hidden_per_dir,
                dropout,
            } => {
                let shared_width = 2 * shared_per_dir;
                let role_in = shared_width + embedding_dim + entity_vocab_size;
                let gru = |units: usize, input: usize| {
                    GruParams::zeros(units, input, Activation::Tanh)
                };
                AnyModel::Tagger(TaggerModel {
                    shared: BiGru {
                        fwd: gru(shared_per_dir, embedding_dim),
                        bwd: gru(shared_per_dir, embedding_dim),
                    },
                    head_doc: DenseParams::zeros(1, shared_width, Activation::Sigmoid),
                    head_sent: DenseParams::zeros(1, shared_width, Activation::Sigmoid),
                    role_bi: BiGru {
                        fwd: gru(role_hidden_per_dir, role_in),
                        bwd: gru(role_hidden_per_dir, role_in),
                    },
                    role_out: gru(tag_count, 2 * role_hidden_per_dir),
                    dropout,
                })
            }
        }
    }

    pub fn arch_name(&self) -> &'static str {
        match self {
            ModelSpec::Classifier { .. } => "classifier",
            ModelSpec::Tagger { .. } => "tagger",
        }
    }
}

/// Either architecture, for checkpointing and the inference pipeline.
#[derive(Debug, Clone)]
pub enum AnyModel {
    Classifier(ClassifierModel),
    Tagger(TaggerModel),
}

impl AnyModel {
    pub fn spec(&self) -> ModelSpec {
        match self {
            AnyModel::Classifier(m) => ModelSpec::Classifier {
                embedding_dim: m.embedding_dim(),
                units_per_dir: m.recurrent.fwd.units(),
                dropout: m.dropout,
            },
            AnyModel::Tagger(m) => ModelSpec::Tagger {
                embedding_dim: m.embedding_dim(),
                entity_vocab_size: m.entity_vocab_size(),
                tag_count: m.tag_count(),
                shared_per_dir: m.shared.fwd.units(),
                role_hidden_per_dir: m.role_bi.fwd.units(),
                dropout: m.dropout,
            },
        }
    }

    pub fn arch_name(&self) -> &'static str {
        match self {
            AnyModel::Classifier(_) => "classifier",
            AnyModel::Tagger(_) => "tagger",
        }
    }

    pub fn embedding_dim(&self) -> usize {
        match self {
            AnyModel::Classifier(m) => m.embedding_dim(),
            AnyModel::Tagger(m) => m.embedding_dim(),
        }
    }
}

impl TensorSet for AnyModel {
    fn visit(&self, f: &mut dyn FnMut(&str, &[f64])) {
        match self {
            AnyModel::Classifier(m) => m.visit(f),
            AnyModel::Tagger(m) => m.visit(f),
        }
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        match self {
            AnyModel::Classifier(m) => m.visit_mut(f),
            AnyModel::Tagger(m) => m.visit_mut(f),
        }
    }
}

// ---------------------------------------------------------------------------
// Decoding
// ---------------------------------------------------------------------------

/// Threshold rule for the sigmoid heads; a probability exactly at the
/// threshold counts as positive.
pub fn predict_label(probability: f64, threshold: f64) -> u8 {
    u8::from(probability >= threshold)
}

/// Argmax tag per unmasked position (ties to the lowest index); masked
/// positions are omitted, so the result aligns with the unpadded tokens.
pub fn decode_tags(
    tag_probs: &Array2<f64>,
    mask: &[bool],
    vocab: &TagVocabulary,
) -> Vec<String> {
    let mut out = Vec::new();
    for (t, &keep) in mask.iter().enumerate() {
        if !keep {
            continue;
        }
        let row = tag_probs.row(t);
        let mut best = 0usize;
        for (j, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = j;
            }
        }
        out.push(
            vocab
                .tag_name(best)
                .unwrap_or("O")
                .to_string(),
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(seed: u64) -> TrainConfig {
        TrainConfig {
            run_seed: seed,
            ..TrainConfig::default()
        }
    }

    fn embed(t: usize, dim: usize, salt: f64) -> Array2<f64> {
        Array2::from_shape_fn((t, dim), |(i, j)| ((i * 5 + j) as f64 * 0.3 + salt).sin())
    }

    #[test]
    fn classifier_builder_enforces_the_fixed_width() {
        assert!(build_classifier(8, &cfg(1)).is_ok());
        let mut bad = cfg(1);
        bad.classifier_units = 12;
        let err = build_classifier(8, &bad).unwrap_err();
        assert!(err.to_string().contains("10"), "{err}");
        assert!(build_classifier(0, &cfg(1)).is_err());
    }

    #[test]
    fn classifier_shapes_and_probability_range() {
        let model = build_classifier(6, &cfg(3)).unwrap();
        assert_eq!(model.recurrent.output_width(), 10);
        let (p_doc, p_sent) = model.infer(&embed(7, 6, 0.0)).unwrap();
        assert!((0.0..=1.0).contains(&p_doc));
        assert!((0.0..=1.0).contains(&p_sent));
        // Heads share features but not weights.
        assert_ne!(p_doc, p_sent);
    }

    #[test]
    fn classifier_inference_is_deterministic_and_dropout_free() {
        let model = build_classifier(4, &cfg(5)).unwrap();
        let x = embed(5, 4, 1.0);
        assert_eq!(model.infer(&x).unwrap(), model.infer(&x).unwrap());
    }

    #[test]
    fn classifier_has_no_role_head() {
        let model = build_classifier(4, &cfg(5)).unwrap();
        let cache = model.forward(&embed(3, 4, 0.0), Pass::Infer).unwrap();
        let mut grads = model.zero_grads();
        assert!(matches!(
            model.backward(&cache, TaskHead::Role, 0.1, &mut grads),
            Err(ModelError::NoSuchHead(TaskHead::Role))
        ));
    }

    #[test]
    fn sampled_masks_replay_to_the_identical_output() {
        let model = build_classifier(4, &cfg(7)).unwrap();
        let x = embed(6, 4, 2.0);
        let mut rng = nn::seeded_rng(99, 3);
        let cache = model.forward(&x, Pass::Sample(&mut rng)).unwrap();
        let replay = model.forward(&x, Pass::Replay(&cache.masks)).unwrap();
        assert_eq!(cache.p_doc, replay.p_doc);
        assert_eq!(cache.p_sent, replay.p_sent);
        // And dropout actually changed something vs. inference.
        let infer = model.forward(&x, Pass::Infer).unwrap();
        assert_ne!(cache.p_doc, infer.p_doc);
    }

    #[test]
    fn tagger_builder_validates_widths_and_vocab_sizes() {
        assert!(build_tagger(6, 19, 17, &cfg(1)).is_ok());
        let mut bad = cfg(1);
        bad.tagger_shared_units = 24;
        assert!(build_tagger(6, 19, 17, &bad).is_err());
        let mut bad = cfg(1);
        bad.role_hidden_units = 7;
        assert!(build_tagger(6, 19, 17, &bad).is_err());
        assert!(build_tagger(6, 0, 17, &cfg(1)).is_err());
        assert!(build_tagger(6, 19, 1, &cfg(1)).is_err());
    }

    #[test]
    fn tagger_emits_softmax_rows_and_bounded_probabilities() {
        let model = build_tagger(5, 4, 7, &cfg(2)).unwrap();
        let t = 6;
        let x = embed(t, 5, 0.5);
        let mut entities = Array2::zeros((t, 4));
        for i in 0..t {
            entities[[i, i % 4]] = 1.0;
        }
        let mask = vec![true, true, true, true, false, false];
        let (p_doc, p_sent, probs) = model.infer(&x, &entities, &mask).unwrap();
        assert!((0.0..=1.0).contains(&p_doc));
        assert!((0.0..=1.0).contains(&p_sent));
        assert_eq!(probs.dim(), (t, 7));
        for row in probs.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn tagger_rejects_misaligned_examples_and_fully_masked_input() {
        let model = build_tagger(5, 4, 7, &cfg(2)).unwrap();
        let x = embed(3, 5, 0.0);
        let ents3 = Array2::zeros((3, 4));
        assert!(model.infer(&x, &Array2::zeros((2, 4)), &[true; 3]).is_err());
        assert!(model.infer(&x, &Array2::zeros((3, 9)), &[true; 3]).is_err());
        let err = model.infer(&x, &ents3, &[false; 3]).unwrap_err();
        assert!(matches!(err, ModelError::Nn(NnError::EmptySequence)));
    }

    #[test]
    fn model_spec_round_trips_through_build_zero() {
        let model = AnyModel::Tagger(build_tagger(5, 4, 7, &cfg(2)).unwrap());
        let spec = model.spec();
        let rebuilt = spec.build_zero();
        assert_eq!(rebuilt.spec(), spec);
        assert_eq!(rebuilt.flat_len(), model.flat_len());
        let names: Vec<String> = model.tensor_sizes().iter().map(|(n, _)| n.clone()).collect();
        let rebuilt_names: Vec<String> =
            rebuilt.tensor_sizes().iter().map(|(n, _)| n.clone()).collect();
        assert_eq!(names, rebuilt_names);
        assert!(names.iter().any(|n| n == "shared.fwd.w_update"));
        assert!(names.iter().any(|n| n == "role_out.b_candidate"));
    }

    #[test]
    fn grads_walk_matches_model_walk() {
        let model = build_classifier(4, &cfg(9)).unwrap();
        let grads = model.zero_grads();
        assert_eq!(model.tensor_sizes(), grads.tensor_sizes());
        let model = build_tagger(4, 3, 5, &cfg(9)).unwrap();
        let grads = model.zero_grads();
        assert_eq!(model.tensor_sizes(), grads.tensor_sizes());
    }

    #[test]
    fn predict_label_ties_go_positive() {
        assert_eq!(predict_label(0.5, 0.5), 1);
        assert_eq!(predict_label(0.49999, 0.5), 0);
        assert_eq!(predict_label(0.2, 0.1), 1);
    }

    #[test]
    fn decode_tags_argmax_with_low_index_ties_and_mask_omission() {
        let vocab = TagVocabulary::from_roles(&["trigger".into()]).unwrap();
        // Row 1 is uniform: tie resolves to index 0 ("O").
        let probs = ndarray::array![
            [0.1, 0.8, 0.1],
            [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
            [0.2, 0.3, 0.5]
        ];
        let tags = decode_tags(&probs, &[true, true, false], &vocab);
        assert_eq!(tags, vec!["B-trigger", "O"]);
    }
}
