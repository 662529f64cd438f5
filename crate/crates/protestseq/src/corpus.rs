//! Text normalization, tokenization, padding, corpus statistics, and the
//! synthetic corpus generator used by tests and the `synth` subcommand.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::nn::{seeded_rng, streams};

/// Keeps ASCII alphanumerics and whitespace, drops everything else, collapses
/// whitespace runs to one space, trims the ends, optionally lowercases.
/// Idempotent: normalizing a normalized string is the identity.
pub fn normalize_text(text: &str, lowercase: bool) -> String {
    let mut out = String::with_capacity(text.len());
    let mut pending_space = false;
    for ch in text.chars() {
        if ch.is_ascii_alphanumeric() {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.push(if lowercase { ch.to_ascii_lowercase() } else { ch });
        } else if ch.is_whitespace() {
            pending_space = true;
        }
    }
    out
}

/// Splits normalized text on spaces. Only meaningful on
/// [`normalize_text`] output, where runs are already collapsed.
pub fn tokenize(normalized: &str) -> Vec<String> {
    normalized
        .split(' ')
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PaddingSide {
    /// Pad tokens before the sequence (classification inputs).
    Pre,
    /// Pad tokens after the sequence (tagging inputs, keeping token indices
    /// aligned with tag indices).
    Post,
}

#[derive(Debug, Clone, Copy)]
pub struct PaddingSpec {
    pub side: PaddingSide,
    pub target_length: usize,
}

/// Pads (or truncates) to exactly `target_length`, returning the padded
/// tokens and a mask that is `true` on real positions. Truncation keeps the
/// sequence tail under pre-padding and the head under post-padding.
pub fn pad_sequence(tokens: &[String], spec: &PaddingSpec) -> (Vec<String>, Vec<bool>) {
    let target = spec.target_length;
    let pad = crate::PAD_TOKEN.to_string();
    if tokens.len() >= target {
        let kept: Vec<String> = match spec.side {
            PaddingSide::Pre => tokens[tokens.len() - target..].to_vec(),
            PaddingSide::Post => tokens[..target].to_vec(),
        };
        return (kept, vec![true; target]);
    }
    let fill = target - tokens.len();
    let mut padded = Vec::with_capacity(target);
    let mut mask = Vec::with_capacity(target);
    match spec.side {
        PaddingSide::Pre => {
            padded.extend(std::iter::repeat_with(|| pad.clone()).take(fill));
            mask.extend(std::iter::repeat(false).take(fill));
            padded.extend_from_slice(tokens);
            mask.extend(std::iter::repeat(true).take(tokens.len()));
        }
        PaddingSide::Post => {
            padded.extend_from_slice(tokens);
            mask.extend(std::iter::repeat(true).take(tokens.len()));
            padded.extend(std::iter::repeat_with(|| pad.clone()).take(fill));
            mask.extend(std::iter::repeat(false).take(fill));
        }
    }
    (padded, mask)
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct CorpusStats {
    pub count: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub mean_len: f64,
}

/// Token-length statistics; zeroes for an empty corpus.
pub fn corpus_stats(lengths: impl IntoIterator<Item = usize>) -> CorpusStats {
    let mut count = 0usize;
    let mut min_len = usize::MAX;
    let mut max_len = 0usize;
    let mut total = 0usize;
    for len in lengths {
        count += 1;
        min_len = min_len.min(len);
        max_len = max_len.max(len);
        total += len;
    }
    if count == 0 {
        return CorpusStats {
            count: 0,
            min_len: 0,
            max_len: 0,
            mean_len: 0.0,
        };
    }
    CorpusStats {
        count,
        min_len,
        max_len,
        mean_len: total as f64 / count as f64,
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
}

/// Synthetic corpus generator settings. Sizes must be nonzero and
/// `min_len <= max_len`.
#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_positive: usize,
    pub n_negative: usize,
    /// Number of distinct filler words (w000, w001, ...).
    pub filler_vocab_size: usize,
    pub min_len: usize,
    pub max_len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthClassRecord {
    pub id: String,
    pub text: String,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthTagRecord {
    pub tokens: Vec<String>,
    pub tags: Vec<String>,
    pub entities: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticCorpus {
    pub classification: Vec<SynthClassRecord>,
    pub tagged: Vec<SynthTagRecord>,
}

/// Role phrases planted into positive sentences, with the entity label each
/// token carries. Multi-token phrases exercise I- continuation tags.
/// Every word is lowercase alphanumeric and disjoint from the filler
/// vocabulary, so normalization never destroys a planted cue.
pub const TRIGGER_PHRASES: &[(&[&str], &str)] = &[
    (&["protest"], "EVENT"),
    (&["strike"], "EVENT"),
    (&["hunger", "strike"], "EVENT"),
    (&["rally"], "EVENT"),
    (&["march"], "EVENT"),
    (&["demonstration"], "EVENT"),
    (&["picket"], "EVENT"),
    (&["agitation"], "EVENT"),
];

pub const PARTICIPANT_PHRASES: &[(&[&str], &str)] = &[
    (&["workers"], "PERSON"),
    (&["students"], "PERSON"),
    (&["farmers"], "PERSON"),
    (&["doctors"], "PERSON"),
    (&["medical", "officers"], "ORG"),
    (&["teachers"], "PERSON"),
    (&["activists"], "PERSON"),
    (&["villagers"], "PERSON"),
];

pub const PLACE_PHRASES: &[(&[&str], &str)] = &[
    (&["delhi"], "GPE"),
    (&["mumbai"], "GPE"),
    (&["state", "secretariat"], "FAC"),
    (&["kerala"], "GPE"),
    (&["town", "square"], "FAC"),
    (&["national", "highway"], "FAC"),
    (&["chennai"], "GPE"),
    (&["hyderabad"], "GPE"),
];

/// Every single word that can appear inside a trigger phrase; positives are
/// guaranteed to contain at least one.
pub fn trigger_words() -> Vec<&'static str> {
    let mut words: Vec<&str> = TRIGGER_PHRASES
        .iter()
        .flat_map(|(phrase, _)| phrase.iter().copied())
        .collect();
    words.sort_unstable();
    words.dedup();
    words
}

fn filler_word(i: usize) -> String {
    format!("w{i:03}")
}

fn validate(cfg: &SynthConfig) -> Result<(), CorpusError> {
    if cfg.n_positive == 0 || cfg.n_negative == 0 {
        return Err(CorpusError::InvalidConfig(
            "both positive and negative counts must be nonzero".into(),
        ));
    }
    if cfg.filler_vocab_size == 0 {
        return Err(CorpusError::InvalidConfig(
            "filler vocabulary must be nonempty".into(),
        ));
    }
    if cfg.min_len == 0 || cfg.min_len > cfg.max_len {
        return Err(CorpusError::InvalidConfig(format!(
            "need 0 < min_len <= max_len, got {}..{}",
            cfg.min_len, cfg.max_len
        )));
    }
    Ok(())
}

fn random_fillers(rng: &mut impl Rng, n: usize, vocab: usize) -> Vec<String> {
    (0..n).map(|_| filler_word(rng.random_range(0..vocab))).collect()
}

/// Deterministically generates a classification corpus and a tagged corpus
/// from one seed.
///
/// Classification: positives are filler text with one or two trigger words
/// planted at random positions; negatives are pure filler. Tagged: positives
/// plant a participant, a trigger, and a place phrase (in that order, with
/// random filler between) carrying IOB tags and entity labels; negatives are
/// all-O filler. Records are shuffled, so labels arrive in random order.
pub fn generate(cfg: &SynthConfig) -> Result<SyntheticCorpus, CorpusError> {
    validate(cfg)?;
    let mut rng = seeded_rng(cfg.seed, streams::SYNTH);
    let trigger_pool = trigger_words();

    let mut classification = Vec::with_capacity(cfg.n_positive + cfg.n_negative);
    for i in 0..cfg.n_positive {
        let len = rng.random_range(cfg.min_len..=cfg.max_len);
        let mut tokens = random_fillers(&mut rng, len, cfg.filler_vocab_size);
        let n_triggers = 1 + rng.random_range(0..2usize);
        for _ in 0..n_triggers {
            let word = trigger_pool[rng.random_range(0..trigger_pool.len())];
            let at = rng.random_range(0..tokens.len());
            tokens[at] = word.to_string();
        }
        classification.push(SynthClassRecord {
            id: format!("pos_{i:04}"),
            text: tokens.join(" "),
            label: 1,
        });
    }
    for i in 0..cfg.n_negative {
        let len = rng.random_range(cfg.min_len..=cfg.max_len);
        let tokens = random_fillers(&mut rng, len, cfg.filler_vocab_size);
        classification.push(SynthClassRecord {
            id: format!("neg_{i:04}"),
            text: tokens.join(" "),
            label: 0,
        });
    }
    classification.shuffle(&mut rng);

    let mut tagged = Vec::with_capacity(cfg.n_positive + cfg.n_negative);
    for _ in 0..cfg.n_positive {
        tagged.push(planted_sentence(cfg, &mut rng));
    }
    for _ in 0..cfg.n_negative {
        let len = rng.random_range(cfg.min_len..=cfg.max_len);
        let tokens = random_fillers(&mut rng, len, cfg.filler_vocab_size);
        let n = tokens.len();
        tagged.push(SynthTagRecord {
            tokens,
            tags: vec!["O".to_string(); n],
            entities: vec!["NONE".to_string(); n],
        });
    }
    tagged.shuffle(&mut rng);

    Ok(SyntheticCorpus {
        classification,
        tagged,
    })
}

fn planted_sentence(cfg: &SynthConfig, rng: &mut impl Rng) -> SynthTagRecord {
    let (participant, p_ent) = PARTICIPANT_PHRASES[rng.random_range(0..PARTICIPANT_PHRASES.len())];
    let (trigger, t_ent) = TRIGGER_PHRASES[rng.random_range(0..TRIGGER_PHRASES.len())];
    let (place, l_ent) = PLACE_PHRASES[rng.random_range(0..PLACE_PHRASES.len())];
    let phrase_total = participant.len() + trigger.len() + place.len();

    let len = rng
        .random_range(cfg.min_len..=cfg.max_len)
        .max(phrase_total);
    let mut segment_budget = len - phrase_total;
    // Split the filler budget over the four gaps around the three phrases.
    let mut gaps = [0usize; 4];
    for gap in gaps.iter_mut().take(3) {
        *gap = rng.random_range(0..=segment_budget);
        segment_budget -= *gap;
    }
    gaps[3] = segment_budget;

    let mut tokens = Vec::with_capacity(len);
    let mut tags = Vec::with_capacity(len);
    let mut entities = Vec::with_capacity(len);
    let push_fillers = |n: usize, tokens: &mut Vec<String>, tags: &mut Vec<String>, entities: &mut Vec<String>, rng: &mut dyn rand::RngCore| {
        for _ in 0..n {
            tokens.push(filler_word(rng.random_range(0..cfg.filler_vocab_size)));
            tags.push("O".to_string());
            entities.push("NONE".to_string());
        }
    };
    let push_phrase = |phrase: &[&str],
                       role: &str,
                       entity: &str,
                       tokens: &mut Vec<String>,
                       tags: &mut Vec<String>,
                       entities: &mut Vec<String>| {
        for (k, word) in phrase.iter().enumerate() {
            tokens.push(word.to_string());
            tags.push(if k == 0 {
                format!("B-{role}")
            } else {
                format!("I-{role}")
            });
            entities.push(entity.to_string());
        }
    };

    push_fillers(gaps[0], &mut tokens, &mut tags, &mut entities, rng);
    push_phrase(participant, "participant", p_ent, &mut tokens, &mut tags, &mut entities);
    push_fillers(gaps[1], &mut tokens, &mut tags, &mut entities, rng);
    push_phrase(trigger, "trigger", t_ent, &mut tokens, &mut tags, &mut entities);
    push_fillers(gaps[2], &mut tokens, &mut tags, &mut entities, rng);
    push_phrase(place, "place", l_ent, &mut tokens, &mut tags, &mut entities);
    push_fillers(gaps[3], &mut tokens, &mut tags, &mut entities, rng);

    SynthTagRecord {
        tokens,
        tags,
        entities,
    }
}

/// Deterministic train/dev split: the last `ceil(n * dev_fraction)` items
/// become the dev set. Inputs from [`generate`] are already shuffled.
pub fn split_dev<T>(mut items: Vec<T>, dev_fraction: f64) -> (Vec<T>, Vec<T>) {
    assert!(
        (0.0..1.0).contains(&dev_fraction),
        "dev fraction {dev_fraction} outside [0, 1)"
    );
    let n_dev = ((items.len() as f64) * dev_fraction).ceil() as usize;
    let split = items.len() - n_dev.min(items.len());
    let dev = items.split_off(split);
    (items, dev)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalize_strips_punctuation_and_collapses_whitespace() {
        assert_eq!(normalize_text("Govt.\t Readies—2 ", true), "govt readies2");
        assert_eq!(normalize_text("Hello,   WORLD!", true), "hello world");
        assert_eq!(normalize_text("Hello,   WORLD!", false), "Hello WORLD");
        assert_eq!(normalize_text("", true), "");
        assert_eq!(normalize_text("!!!", true), "");
    }

    #[test]
    fn tokenize_splits_and_drops_empties() {
        assert_eq!(tokenize("a b c"), vec!["a", "b", "c"]);
        assert!(tokenize("").is_empty());
    }

    #[test]
    fn pre_padding_prepends_and_masks() {
        let tokens = vec!["a".to_string(), "b".to_string()];
        let (padded, mask) = pad_sequence(
            &tokens,
            &PaddingSpec {
                side: PaddingSide::Pre,
                target_length: 4,
            },
        );
        assert_eq!(padded, vec![crate::PAD_TOKEN, crate::PAD_TOKEN, "a", "b"]);
        assert_eq!(mask, vec![false, false, true, true]);
    }

    #[test]
    fn post_padding_appends_and_masks() {
        let tokens = vec!["a".to_string(), "b".to_string()];
        let (padded, mask) = pad_sequence(
            &tokens,
            &PaddingSpec {
                side: PaddingSide::Post,
                target_length: 3,
            },
        );
        assert_eq!(padded, vec!["a", "b", crate::PAD_TOKEN]);
        assert_eq!(mask, vec![true, true, false]);
    }

    #[test]
    fn truncation_keeps_tail_for_pre_and_head_for_post() {
        let tokens: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
        let (pre, _) = pad_sequence(
            &tokens,
            &PaddingSpec {
                side: PaddingSide::Pre,
                target_length: 2,
            },
        );
        assert_eq!(pre, vec!["c", "d"]);
        let (post, _) = pad_sequence(
            &tokens,
            &PaddingSpec {
                side: PaddingSide::Post,
                target_length: 2,
            },
        );
        assert_eq!(post, vec!["a", "b"]);
    }

    #[test]
    fn stats_over_known_lengths() {
        let s = corpus_stats([3usize, 5, 4]);
        assert_eq!(s.count, 3);
        assert_eq!(s.min_len, 3);
        assert_eq!(s.max_len, 5);
        assert!((s.mean_len - 4.0).abs() < 1e-12);
        assert_eq!(corpus_stats([]).count, 0);
    }

    fn small_cfg(seed: u64) -> SynthConfig {
        SynthConfig {
            seed,
            n_positive: 25,
            n_negative: 25,
            filler_vocab_size: 40,
            min_len: 5,
            max_len: 12,
        }
    }

    #[test]
    fn generator_is_deterministic_and_seed_sensitive() {
        let a = generate(&small_cfg(11)).unwrap();
        let b = generate(&small_cfg(11)).unwrap();
        let c = generate(&small_cfg(12)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn positives_contain_a_trigger_and_negatives_do_not() {
        let corpus = generate(&small_cfg(3)).unwrap();
        let triggers = trigger_words();
        for rec in &corpus.classification {
            let has_trigger = rec
                .text
                .split(' ')
                .any(|tok| triggers.contains(&tok));
            if rec.label == 1 {
                assert!(has_trigger, "positive without trigger: {}", rec.text);
            } else {
                assert!(!has_trigger, "negative with trigger: {}", rec.text);
            }
        }
    }

    #[test]
    fn label_balance_matches_requested_counts() {
        let corpus = generate(&small_cfg(5)).unwrap();
        let pos = corpus
            .classification
            .iter()
            .filter(|r| r.label == 1)
            .count();
        assert_eq!(pos, 25);
        assert_eq!(corpus.classification.len(), 50);
        let ids: std::collections::HashSet<_> =
            corpus.classification.iter().map(|r| &r.id).collect();
        assert_eq!(ids.len(), 50, "record ids must be unique");
    }

    #[test]
    fn tagged_records_are_aligned_and_iob_consistent() {
        let corpus = generate(&small_cfg(7)).unwrap();
        let mut saw_inside_tag = false;
        for rec in &corpus.tagged {
            assert_eq!(rec.tokens.len(), rec.tags.len());
            assert_eq!(rec.tokens.len(), rec.entities.len());
            let mut prev_role: Option<&str> = None;
            for tag in &rec.tags {
                if let Some(role) = tag.strip_prefix("I-") {
                    saw_inside_tag = true;
                    assert_eq!(prev_role, Some(role), "I-{role} without B-{role} before it");
                }
                prev_role = tag.strip_prefix("B-").or_else(|| tag.strip_prefix("I-"));
            }
        }
        assert!(saw_inside_tag, "corpus never exercised I- tags");
    }

    #[test]
    fn generator_rejects_bad_configs() {
        let mut cfg = small_cfg(1);
        cfg.n_positive = 0;
        assert!(generate(&cfg).is_err());
        let mut cfg = small_cfg(1);
        cfg.min_len = 9;
        cfg.max_len = 3;
        assert!(generate(&cfg).is_err());
        let mut cfg = small_cfg(1);
        cfg.filler_vocab_size = 0;
        assert!(generate(&cfg).is_err());
    }

    #[test]
    fn dev_split_is_deterministic_and_exact() {
        let (train, dev) = split_dev((0..10).collect::<Vec<_>>(), 0.2);
        assert_eq!(train, vec![0, 1, 2, 3, 4, 5, 6, 7]);
        assert_eq!(dev, vec![8, 9]);
        let (train, dev) = split_dev(vec![1], 0.5);
        assert!(train.is_empty());
        assert_eq!(dev, vec![1]);
    }

    proptest! {
        #[test]
        fn normalization_is_idempotent(s in "\\PC*", lower in proptest::bool::ANY) {
            let once = normalize_text(&s, lower);
            prop_assert_eq!(normalize_text(&once, lower), once.clone());
            // Output alphabet: ASCII alphanumerics and single spaces.
            prop_assert!(!once.starts_with(' ') && !once.ends_with(' '));
            prop_assert!(!once.contains("  "));
            for ch in once.chars() {
                prop_assert!(ch.is_ascii_alphanumeric() || ch == ' ');
                if lower {
                    prop_assert!(!ch.is_ascii_uppercase());
                }
            }
        }

        #[test]
        fn padding_always_hits_target_and_mask_counts_real_tokens(
            len in 0usize..12,
            target in 1usize..12,
            pre in proptest::bool::ANY,
        ) {
            let tokens: Vec<String> = (0..len).map(|i| format!("t{i}")).collect();
            let spec = PaddingSpec {
                side: if pre { PaddingSide::Pre } else { PaddingSide::Post },
                target_length: target,
            };
            let (padded, mask) = pad_sequence(&tokens, &spec);
            prop_assert_eq!(padded.len(), target);
            prop_assert_eq!(mask.len(), target);
            let real = mask.iter().filter(|&&m| m).count();
            prop_assert_eq!(real, len.min(target));
            for (tok, &m) in padded.iter().zip(mask.iter()) {
                prop_assert_eq!(tok == crate::PAD_TOKEN, !m);
            }
        }
    }
}
