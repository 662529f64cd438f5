//! Dataset and artifact I/O: JSONL classification records, CoNLL-style tag
//! files, tag and entity vocabularies, IOB validation, and the binary model
//! checkpoint.

pub mod checkpoint;

use std::collections::HashSet;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}, line {line}: {reason}")]
    Parse {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("checkpoint {path}: unsupported format version {found} (supported: {supported})")]
    VersionMismatch {
        path: String,
        found: u32,
        supported: u32,
    },
    #[error("checkpoint {path} is corrupt: {reason}")]
    CorruptCheckpoint { path: String, reason: String },
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: String, reason: String },
    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),
}

fn io_error(path: &Path, source: std::io::Error) -> DataError {
    DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn parse_error(path: &Path, line: usize, reason: impl Into<String>) -> DataError {
    DataError::Parse {
        path: path.display().to_string(),
        line,
        reason: reason.into(),
    }
}

/// One classification example. `label` is absent in prediction inputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassRecord {
    pub id: String,
    pub text: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<u8>,
}

/// Reads JSONL classification records: one `{"id", "text", "label"?}` object
/// per line. Labels must be 0 or 1 when present; ids must be unique.
pub fn read_jsonl_classification(path: impl AsRef<Path>) -> Result<Vec<ClassRecord>, DataError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| io_error(path, e))?;
    let reader = std::io::BufReader::new(file);
    let mut records = Vec::new();
    let mut seen_ids = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| io_error(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ClassRecord = serde_json::from_str(&line)
            .map_err(|e| parse_error(path, line_no, format!("bad record: {e}")))?;
        if let Some(label) = record.label {
            if label > 1 {
                return Err(parse_error(
                    path,
                    line_no,
                    format!("label must be 0 or 1, got {label}"),
                ));
            }
        }
        if record.id.is_empty() {
            return Err(parse_error(path, line_no, "empty id"));
        }
        if !seen_ids.insert(record.id.clone()) {
            return Err(parse_error(
                path,
                line_no,
                format!("duplicate id {:?}", record.id),
            ));
        }
        records.push(record);
    }
    Ok(records)
}

/// Writes one JSON object per line; works for any serializable row type.
pub fn write_jsonl<T: Serialize>(
    path: impl AsRef<Path>,
    rows: impl IntoIterator<Item = T>,
) -> Result<(), DataError> {
    let path = path.as_ref();
    let mut out =
        BufWriter::new(std::fs::File::create(path).map_err(|e| io_error(path, e))?);
    for row in rows {
        let json = serde_json::to_string(&row)
            .map_err(|e| parse_error(path, 0, format!("serialization failed: {e}")))?;
        writeln!(out, "{json}").map_err(|e| io_error(path, e))?;
    }
    out.flush().map_err(|e| io_error(path, e))
}

/// One tagged sentence: aligned tokens and IOB tags, optionally a third
/// aligned column of entity labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagRecord {
    pub tokens: Vec<String>,
    pub tags: Vec<String>,
    pub entities: Option<Vec<String>>,
}

/// Reads a tab-separated tag file: `token<TAB>tag[<TAB>entity]` lines, blank
/// line between sentences. A sentence must use the same column count
/// throughout.
pub fn read_tag_file(path: impl AsRef<Path>) -> Result<Vec<TagRecord>, DataError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| io_error(path, e))?;
    let reader = std::io::BufReader::new(file);

    let mut records = Vec::new();
    let mut tokens: Vec<String> = Vec::new();
    let mut tags: Vec<String> = Vec::new();
    let mut entities: Vec<String> = Vec::new();
    let mut columns: Option<usize> = None;
    let mut sentence_start_line = 0usize;

    let mut flush = |tokens: &mut Vec<String>,
                     tags: &mut Vec<String>,
                     entities: &mut Vec<String>,
                     columns: &mut Option<usize>| {
        if tokens.is_empty() {
            return;
        }
        records.push(TagRecord {
            tokens: std::mem::take(tokens),
            tags: std::mem::take(tags),
            entities: if *columns == Some(3) {
                Some(std::mem::take(entities))
            } else {
                entities.clear();
                None
            },
        });
        *columns = None;
    };

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| io_error(path, e))?;
        if line.trim().is_empty() {
            flush(&mut tokens, &mut tags, &mut entities, &mut columns);
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if !(2..=3).contains(&fields.len()) {
            return Err(parse_error(
                path,
                line_no,
                format!("expected 2 or 3 tab-separated fields, got {}", fields.len()),
            ));
        }
        match columns {
            None => {
                columns = Some(fields.len());
                sentence_start_line = line_no;
            }
            Some(n) if n != fields.len() => {
                return Err(parse_error(
                    path,
                    line_no,
                    format!(
                        "column count changed mid-sentence (sentence starting at line {sentence_start_line} has {n} columns)"
                    ),
                ));
            }
            Some(_) => {}
        }
        if fields[0].is_empty() || fields[1].is_empty() {
            return Err(parse_error(path, line_no, "empty token or tag field"));
        }
        tokens.push(fields[0].to_string());
        tags.push(fields[1].to_string());
        if fields.len() == 3 {
            entities.push(fields[2].to_string());
        }
    }
    flush(&mut tokens, &mut tags, &mut entities, &mut columns);
    Ok(records)
}

/// Writes tag records in the format [`read_tag_file`] parses.
pub fn write_tag_file(
    path: impl AsRef<Path>,
    records: &[TagRecord],
) -> Result<(), DataError> {
    let path = path.as_ref();
    let mut out =
        BufWriter::new(std::fs::File::create(path).map_err(|e| io_error(path, e))?);
    let write = |out: &mut BufWriter<std::fs::File>, s: String| -> Result<(), DataError> {
        out.write_all(s.as_bytes()).map_err(|e| io_error(path, e))
    };
    for (i, rec) in records.iter().enumerate() {
        if i > 0 {
            write(&mut out, "\n".to_string())?;
        }
        for t in 0..rec.tokens.len() {
            let line = match &rec.entities {
                Some(ents) => format!("{}\t{}\t{}\n", rec.tokens[t], rec.tags[t], ents[t]),
                None => format!("{}\t{}\n", rec.tokens[t], rec.tags[t]),
            };
            write(&mut out, line)?;
        }
    }
    out.flush().map_err(|e| io_error(path, e))
}

/// The role inventory and its derived tag list: `O` first, then `B-role`,
/// `I-role` per role in order. Tag ids index softmax outputs, so `O` is
/// always id 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagVocabulary {
    roles: Vec<String>,
    tags: Vec<String>,
}

impl TagVocabulary {
    pub const DEFAULT_ROLES: [&'static str; 8] = [
        "trigger",
        "participant",
        "organizer",
        "target",
        "etime",
        "fname",
        "place",
        "loc",
    ];

    pub fn from_roles(roles: &[String]) -> Result<Self, DataError> {
        if roles.is_empty() {
            return Err(DataError::InvalidVocabulary("no roles given".into()));
        }
        let mut seen = HashSet::new();
        for role in roles {
            if role.is_empty() || role.chars().any(|c| c.is_whitespace()) || role == "O" {
                return Err(DataError::InvalidVocabulary(format!(
                    "bad role name {role:?}"
                )));
            }
            if !seen.insert(role) {
                return Err(DataError::InvalidVocabulary(format!(
                    "duplicate role {role:?}"
                )));
            }
        }
        let mut tags = Vec::with_capacity(1 + roles.len() * 2);
        tags.push("O".to_string());
        for role in roles {
            tags.push(format!("B-{role}"));
            tags.push(format!("I-{role}"));
        }
        Ok(TagVocabulary {
            roles: roles.to_vec(),
            tags,
        })
    }

    pub fn default_roles() -> Self {
        let roles: Vec<String> = Self::DEFAULT_ROLES.iter().map(|s| s.to_string()).collect();
        Self::from_roles(&roles).expect("default roles are valid")
    }

    pub fn roles(&self) -> &[String] {
        &self.roles
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn tag_id(&self, tag: &str) -> Option<usize> {
        self.tags.iter().position(|t| t == tag)
    }

    pub fn tag_name(&self, id: usize) -> Option<&str> {
        self.tags.get(id).map(String::as_str)
    }
}

/// Entity label inventory; `NONE` is always index 0 and is the fallback for
/// unknown labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityVocabulary {
    labels: Vec<String>,
}

impl EntityVocabulary {
    /// The 18 OntoNotes named-entity types, after the `NONE` slot.
    pub const DEFAULT_TYPES: [&'static str; 18] = [
        "PERSON",
        "NORP",
        "FAC",
        "ORG",
        "GPE",
        "LOC",
        "PRODUCT",
        "EVENT",
        "WORK_OF_ART",
        "LAW",
        "LANGUAGE",
        "DATE",
        "TIME",
        "PERCENT",
        "MONEY",
        "QUANTITY",
        "ORDINAL",
        "CARDINAL",
    ];

    pub fn from_labels(labels: &[String]) -> Result<Self, DataError> {
        if labels.first().map(String::as_str) != Some("NONE") {
            return Err(DataError::InvalidVocabulary(
                "entity vocabulary must list NONE first".into(),
            ));
        }
        let mut seen = HashSet::new();
        for label in labels {
            if label.is_empty() || label.chars().any(|c| c.is_whitespace()) {
                return Err(DataError::InvalidVocabulary(format!(
                    "bad entity label {label:?}"
                )));
            }
            if !seen.insert(label) {
                return Err(DataError::InvalidVocabulary(format!(
                    "duplicate entity label {label:?}"
                )));
            }
        }
        Ok(EntityVocabulary {
            labels: labels.to_vec(),
        })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn id(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

impl Default for EntityVocabulary {
    fn default() -> Self {
        let mut labels = vec!["NONE".to_string()];
        labels.extend(Self::DEFAULT_TYPES.iter().map(|s| s.to_string()));
        EntityVocabulary { labels }
    }
}

/// Reads a newline-separated list, skipping blanks and `#` comments.
pub fn read_list_file(path: impl AsRef<Path>) -> Result<Vec<String>, DataError> {
    let path = path.as_ref();
    let content = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    Ok(content
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect())
}

pub fn load_entity_vocab(path: impl AsRef<Path>) -> Result<EntityVocabulary, DataError> {
    EntityVocabulary::from_labels(&read_list_file(path)?)
}

pub fn load_tag_vocab(path: impl AsRef<Path>) -> Result<TagVocabulary, DataError> {
    TagVocabulary::from_roles(&read_list_file(path)?)
}

/// Checks IOB transition discipline: an `I-role` may only continue a `B-role`
/// or `I-role` of the same role. With `repair`, offending tags are rewritten
/// to `B-role` (making the result pass a second validation unchanged);
/// without it they are only reported. Returns the (possibly repaired) tags
/// and one warning per finding.
pub fn validate_iob(tags: &[String], repair: bool) -> (Vec<String>, Vec<String>) {
    let mut out = Vec::with_capacity(tags.len());
    let mut warnings = Vec::new();
    let mut prev_role: Option<String> = None;
    for (t, tag) in tags.iter().enumerate() {
        let mut tag = tag.clone();
        if let Some(role) = tag.strip_prefix("I-").map(str::to_string) {
            if prev_role.as_deref() != Some(role.as_str()) {
                warnings.push(format!(
                    "position {t}: I-{role} does not continue a {role} span"
                ));
                if repair {
                    tag = format!("B-{role}");
                }
            }
            prev_role = Some(role);
        } else if let Some(role) = tag.strip_prefix("B-") {
            prev_role = Some(role.to_string());
        } else {
            if tag != "O" {
                warnings.push(format!("position {t}: unrecognized tag {tag:?}"));
            }
            prev_role = None;
        }
        out.push(tag);
    }
    (out, warnings)
}

/// One-hot entity matrix (`T x vocab`). Unknown labels fall back to `NONE`
/// (index 0) with a warning.
pub fn one_hot_entities(
    labels: &[String],
    vocab: &EntityVocabulary,
) -> (Array2<f64>, Vec<String>) {
    let mut matrix = Array2::zeros((labels.len(), vocab.len()));
    let mut warnings = Vec::new();
    for (t, label) in labels.iter().enumerate() {
        let id = match vocab.id(label) {
            Some(id) => id,
            None => {
                warnings.push(format!(
                    "position {t}: unknown entity label {label:?}, using NONE"
                ));
                0
            }
        };
        matrix[[t, id]] = 1.0;
    }
    (matrix, warnings)
}
