//! Inference pipeline: a loaded checkpoint plus the embedding and
//! normalization choices it was trained with, behind a small API that takes
//! raw text or token lists.

use std::path::Path;

use ndarray::Array2;

use crate::corpus::{normalize_text, pad_sequence, tokenize, PaddingSide, PaddingSpec};
use crate::dataio::{
    load_checkpoint, one_hot_entities, CheckpointMeta, DataError, EntityVocabulary,
    TagVocabulary,
};
use crate::embeddings::{load_vector_table, EmbedError, Embedder, VectorTable};
use crate::models::{decode_tags, predict_label, AnyModel, ModelError};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("checkpoint metadata does not fit the model: {0}")]
    MetaMismatch(String),
    #[error("this checkpoint holds a {found}, but the operation needs a {expected}")]
    WrongArchitecture {
        expected: &'static str,
        found: &'static str,
    },
    #[error("no tokens to process")]
    EmptyInput,
}

/// Output of the two sigmoid heads, with labels thresholded by the value
/// stored in the checkpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassScores {
    pub p_doc: f64,
    pub p_sent: f64,
    pub label_doc: u8,
    pub label_sent: u8,
}

#[derive(Debug, Clone)]
pub struct TaggedSentence {
    pub scores: ClassScores,
    /// One tag per input token.
    pub tags: Vec<String>,
    /// Non-fatal notes, e.g. unknown entity labels replaced by NONE.
    pub warnings: Vec<String>,
}

#[derive(Debug)]
pub struct Pipeline {
    model: AnyModel,
    meta: CheckpointMeta,
    embedder: Embedder,
    tag_vocab: Option<TagVocabulary>,
    entity_vocab: Option<EntityVocabulary>,
}

impl Pipeline {
    /// Loads a checkpoint and, optionally, a pretrained vector table. Without
    /// one, every token goes through the checkpoint's out-of-vocabulary
    /// policy (which must not require subword buckets in that case).
    pub fn from_checkpoint(
        checkpoint: impl AsRef<Path>,
        vectors: Option<&Path>,
    ) -> Result<Self, PipelineError> {
        let (model, meta) = load_checkpoint(checkpoint)?;
        let table = match vectors {
            Some(path) => load_vector_table(path, Some(model.embedding_dim()))?,
            None => VectorTable::empty(model.embedding_dim()),
        };
        let embedder = Embedder::new(table, meta.oov)?;
        let (tag_vocab, entity_vocab) = match &model {
            AnyModel::Classifier(_) => (None, None),
            AnyModel::Tagger(m) => {
                let roles = meta.roles.as_ref().ok_or_else(|| {
                    PipelineError::MetaMismatch("tagger checkpoint lists no roles".into())
                })?;
                let tag_vocab = TagVocabulary::from_roles(roles)?;
                if tag_vocab.len() != m.tag_count() {
                    return Err(PipelineError::MetaMismatch(format!(
                        "{} roles give {} tags, model emits {}",
                        roles.len(),
                        tag_vocab.len(),
                        m.tag_count()
                    )));
                }
                let labels = meta.entity_labels.as_ref().ok_or_else(|| {
                    PipelineError::MetaMismatch(
                        "tagger checkpoint lists no entity labels".into(),
                    )
                })?;
                let entity_vocab = EntityVocabulary::from_labels(labels)?;
                if entity_vocab.len() != m.entity_vocab_size() {
                    return Err(PipelineError::MetaMismatch(format!(
                        "{} entity labels, model expects {}",
                        entity_vocab.len(),
                        m.entity_vocab_size()
                    )));
                }
                (Some(tag_vocab), Some(entity_vocab))
            }
        };
        Ok(Pipeline {
            model,
            meta,
            embedder,
            tag_vocab,
            entity_vocab,
        })
    }

    pub fn model(&self) -> &AnyModel {
        &self.model
    }

    pub fn meta(&self) -> &CheckpointMeta {
        &self.meta
    }

    pub fn arch_name(&self) -> &'static str {
        self.model.arch_name()
    }

    pub fn threshold(&self) -> f64 {
        self.meta.threshold
    }

    pub fn tag_vocab(&self) -> Option<&TagVocabulary> {
        self.tag_vocab.as_ref()
    }

    pub fn entity_vocab(&self) -> Option<&EntityVocabulary> {
        self.entity_vocab.as_ref()
    }

    /// Normalizes and tokenizes the way training did.
    pub fn prepare_text(&self, text: &str) -> Vec<String> {
        tokenize(&normalize_text(text, self.meta.lowercase))
    }

    /// Pre-tokenized input can't be re-tokenized without breaking alignment,
    /// but casing must still match training.
    fn case_tokens(&self, tokens: &[String]) -> Vec<String> {
        if self.meta.lowercase {
            tokens.iter().map(|t| t.to_lowercase()).collect()
        } else {
            tokens.to_vec()
        }
    }

    /// Replays the training-time padding. Trained parameters drive pad rows
    /// away from the no-op regime, so a sequence padded differently than in
    /// training runs under different recurrence dynamics; padding the same
    /// way keeps inference on-distribution. Classifier inputs are pre-padded
    /// (and long ones keep their tail); tagger inputs are post-padded but
    /// never truncated, because predicted tags must align with the input.
    fn pad_for_inference(&self, tokens: Vec<String>) -> (Vec<String>, Vec<bool>) {
        match (&self.model, self.meta.pad_length) {
            (AnyModel::Classifier(_), Some(target)) => pad_sequence(
                &tokens,
                &PaddingSpec {
                    side: PaddingSide::Pre,
                    target_length: target,
                },
            ),
            (AnyModel::Tagger(_), Some(target)) if tokens.len() < target => pad_sequence(
                &tokens,
                &PaddingSpec {
                    side: PaddingSide::Post,
                    target_length: target,
                },
            ),
            _ => {
                let mask = vec![true; tokens.len()];
                (tokens, mask)
            }
        }
    }

    fn scores(&self, p_doc: f64, p_sent: f64) -> ClassScores {
        ClassScores {
            p_doc,
            p_sent,
            label_doc: predict_label(p_doc, self.meta.threshold),
            label_sent: predict_label(p_sent, self.meta.threshold),
        }
    }

    /// Document and sentence scores for a token list. Works on either
    /// architecture; the tagger needs at least one token.
    pub fn classify_tokens(&self, tokens: &[String]) -> Result<ClassScores, PipelineError> {
        if tokens.is_empty() && matches!(self.model, AnyModel::Tagger(_)) {
            return Err(PipelineError::EmptyInput);
        }
        let (padded, mask) = self.pad_for_inference(self.case_tokens(tokens));
        let embedded = self.embedder.embed_sequence(&padded, crate::PAD_TOKEN);
        match &self.model {
            AnyModel::Classifier(m) => {
                let (p_doc, p_sent) = m.infer(&embedded.matrix)?;
                Ok(self.scores(p_doc, p_sent))
            }
            AnyModel::Tagger(m) => {
                let entities = Array2::zeros((padded.len(), m.entity_vocab_size()));
                let (p_doc, p_sent, _) = m.infer(&embedded.matrix, &entities, &mask)?;
                Ok(self.scores(p_doc, p_sent))
            }
        }
    }

    pub fn classify_text(&self, text: &str) -> Result<ClassScores, PipelineError> {
        self.classify_tokens(&self.prepare_text(text))
    }

    /// Tags a sentence (tagger checkpoints only). `entities` carries one
    /// label per token when available; unknown labels fall back to NONE with
    /// a warning, and `None` means no entity information at all.
    pub fn tag_tokens(
        &self,
        tokens: &[String],
        entities: Option<&[String]>,
    ) -> Result<TaggedSentence, PipelineError> {
        let model = match &self.model {
            AnyModel::Tagger(m) => m,
            AnyModel::Classifier(_) => {
                return Err(PipelineError::WrongArchitecture {
                    expected: "tagger",
                    found: "classifier",
                })
            }
        };
        if tokens.is_empty() {
            return Err(PipelineError::EmptyInput);
        }
        let vocab = self.entity_vocab.as_ref().expect("tagger has entity vocab");
        let mut warnings = Vec::new();
        let entity_matrix = match entities {
            Some(labels) => {
                if labels.len() != tokens.len() {
                    return Err(PipelineError::MetaMismatch(format!(
                        "{} entity labels for {} tokens",
                        labels.len(),
                        tokens.len()
                    )));
                }
                let (matrix, mut warn) = one_hot_entities(labels, vocab);
                warnings.append(&mut warn);
                matrix
            }
            None => Array2::zeros((tokens.len(), vocab.len())),
        };
        let (padded, mask) = self.pad_for_inference(self.case_tokens(tokens));
        let embedded = self.embedder.embed_sequence(&padded, crate::PAD_TOKEN);
        // Post-padding keeps real tokens at the front, so the entity rows
        // can be copied straight in; pad rows stay zero like in training.
        let mut entities_padded = Array2::zeros((padded.len(), vocab.len()));
        entities_padded
            .slice_mut(ndarray::s![..entity_matrix.nrows(), ..])
            .assign(&entity_matrix);
        let (p_doc, p_sent, tag_probs) =
            model.infer(&embedded.matrix, &entities_padded, &mask)?;
        let tags = decode_tags(
            &tag_probs,
            &mask,
            self.tag_vocab.as_ref().expect("tagger has tag vocab"),
        );
        Ok(TaggedSentence {
            scores: self.scores(p_doc, p_sent),
            tags,
            warnings,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::save_checkpoint;
    use crate::embeddings::OovPolicy;
    use crate::models::{build_classifier, build_tagger, TrainConfig};

    fn write_classifier(dir: &Path) -> std::path::PathBuf {
        let cfg = TrainConfig { run_seed: 5, ..TrainConfig::default() };
        let model = AnyModel::Classifier(build_classifier(6, &cfg).unwrap());
        let meta = CheckpointMeta {
            spec: model.spec(),
            threshold: 0.5,
            lowercase: true,
            oov: OovPolicy::default(),
            pad_length: None,
            roles: None,
            entity_labels: None,
            train_config: cfg,
        };
        let path = dir.join("classifier.pseq");
        save_checkpoint(&path, &model, &meta).unwrap();
        path
    }

    fn write_tagger(dir: &Path, roles: Vec<String>) -> std::path::PathBuf {
        let cfg = TrainConfig {
            run_seed: 6,
            role_hidden_units: 6,
            ..TrainConfig::default()
        };
        let tag_count = 1 + 2 * roles.len();
        let labels: Vec<String> = ["NONE", "PERSON", "ORG"].iter().map(|s| s.to_string()).collect();
        let model = AnyModel::Tagger(build_tagger(6, labels.len(), tag_count, &cfg).unwrap());
        let meta = CheckpointMeta {
            spec: model.spec(),
            threshold: 0.5,
            lowercase: true,
            oov: OovPolicy::default(),
            pad_length: None,
            roles: Some(roles),
            entity_labels: Some(labels),
            train_config: cfg,
        };
        let path = dir.join("tagger.pseq");
        save_checkpoint(&path, &model, &meta).unwrap();
        path
    }

    #[test]
    fn classifier_pipeline_scores_text_deterministically() {
        let dir = tempfile::tempdir().unwrap();
        let pipeline = Pipeline::from_checkpoint(write_classifier(dir.path()), None).unwrap();
        assert_eq!(pipeline.arch_name(), "classifier");
        let a = pipeline.classify_text("Protest in the square!").unwrap();
        let b = pipeline.classify_text("Protest in the square!").unwrap();
        assert_eq!(a, b);
        // Lowercasing at normalization makes case irrelevant.
        let c = pipeline.classify_text("PROTEST IN THE SQUARE").unwrap();
        assert_eq!(a.p_doc, c.p_doc);
        assert!((0.0..=1.0).contains(&a.p_doc));
        assert_eq!(a.label_doc, u8::from(a.p_doc >= 0.5));
    }

    #[test]
    fn classifier_handles_empty_text_and_rejects_tagging() {
        let dir = tempfile::tempdir().unwrap();
        let pipeline = Pipeline::from_checkpoint(write_classifier(dir.path()), None).unwrap();
        // Zero tokens still classify (zero feature vector).
        let scores = pipeline.classify_tokens(&[]).unwrap();
        assert!(scores.p_doc.is_finite());
        let err = pipeline.tag_tokens(&["x".to_string()], None).unwrap_err();
        assert!(matches!(err, PipelineError::WrongArchitecture { .. }));
    }

    #[test]
    fn tagger_pipeline_tags_with_and_without_entities() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_tagger(dir.path(), vec!["trigger".into(), "place".into()]);
        let pipeline = Pipeline::from_checkpoint(&path, None).unwrap();
        let tokens: Vec<String> =
            ["police", "blocked", "the", "march"].iter().map(|s| s.to_string()).collect();
        let plain = pipeline.tag_tokens(&tokens, None).unwrap();
        assert_eq!(plain.tags.len(), 4);
        assert!(plain.warnings.is_empty());
        let vocab = pipeline.tag_vocab().unwrap();
        for tag in &plain.tags {
            assert!(vocab.tag_id(tag).is_some(), "unknown tag {tag}");
        }
        let ents: Vec<String> =
            ["ORG", "NONE", "NONE", "WHAT"].iter().map(|s| s.to_string()).collect();
        let with_ents = pipeline.tag_tokens(&tokens, Some(&ents)).unwrap();
        assert_eq!(with_ents.warnings.len(), 1, "{:?}", with_ents.warnings);
        // Entity features reach the role branch, not the shared layer.
        assert_eq!(plain.scores.p_doc, with_ents.scores.p_doc);

        assert!(matches!(
            pipeline.tag_tokens(&[], None),
            Err(PipelineError::EmptyInput)
        ));
        assert!(matches!(
            pipeline.tag_tokens(&tokens, Some(&ents[..2])),
            Err(PipelineError::MetaMismatch(_))
        ));
        assert!(matches!(
            pipeline.classify_tokens(&[]),
            Err(PipelineError::EmptyInput)
        ));
    }

    #[test]
    fn inference_replays_the_training_pad_length() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_classifier(dir.path());
        let (model, mut meta) = load_checkpoint(&path).unwrap();
        meta.pad_length = Some(6);
        let padded_path = dir.path().join("padded.pseq");
        save_checkpoint(&padded_path, &model, &meta).unwrap();
        let pipeline = Pipeline::from_checkpoint(&padded_path, None).unwrap();

        // Short input must score exactly like the same input pre-padded by
        // hand: the pipeline inserts the pads itself.
        let short: Vec<String> = ["protest", "square"].iter().map(|s| s.to_string()).collect();
        let mut by_hand: Vec<String> = vec![crate::PAD_TOKEN.to_string(); 4];
        by_hand.extend(short.iter().cloned());
        let auto = pipeline.classify_tokens(&short).unwrap();
        let manual = pipeline.classify_tokens(&by_hand).unwrap();
        assert_eq!(auto.p_doc, manual.p_doc);
        assert_eq!(auto.p_sent, manual.p_sent);

        // Over-length input keeps its tail, like training-time truncation.
        let long: Vec<String> =
            (0..9).map(|i| format!("w{i}")).collect();
        let truncated = pipeline.classify_tokens(&long).unwrap();
        let tail = pipeline.classify_tokens(&long[3..]).unwrap();
        assert_eq!(truncated.p_doc, tail.p_doc);
    }

    #[test]
    fn tagger_padding_never_drops_tags() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_tagger(dir.path(), vec!["trigger".into()]);
        let (model, mut meta) = load_checkpoint(&path).unwrap();
        meta.pad_length = Some(6);
        let padded_path = dir.path().join("padded.pseq");
        save_checkpoint(&padded_path, &model, &meta).unwrap();
        let pipeline = Pipeline::from_checkpoint(&padded_path, None).unwrap();

        // Pads are appended for the network but masked out of the answer.
        let short: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        assert_eq!(pipeline.tag_tokens(&short, None).unwrap().tags.len(), 3);
        // Longer-than-target input is tagged in full, never truncated.
        let long: Vec<String> = (0..9).map(|i| format!("w{i}")).collect();
        assert_eq!(pipeline.tag_tokens(&long, None).unwrap().tags.len(), 9);
    }

    #[test]
    fn vocab_shape_disagreements_are_rejected_at_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_tagger(dir.path(), vec!["trigger".into()]);
        // Model was sized for 1 role (3 tags); rewrite meta to claim 2 roles.
        let (model, mut meta) = load_checkpoint(&path).unwrap();
        meta.roles = Some(vec!["trigger".into(), "place".into()]);
        let path2 = dir.path().join("bad.pseq");
        save_checkpoint(&path2, &model, &meta).unwrap();
        let err = Pipeline::from_checkpoint(&path2, None).unwrap_err();
        assert!(matches!(err, PipelineError::MetaMismatch(_)), "{err}");
    }
}
