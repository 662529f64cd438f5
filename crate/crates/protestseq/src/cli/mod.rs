//! Command-line interface.
//!
//! Subcommands: `synth` (generate a synthetic corpus), `train`, `evaluate`,
//! `predict`, `gradcheck` (finite-difference verification of the assembled
//! models), and `inspect` (describe a checkpoint).
//!
//! Options resolve in three layers: built-in defaults, then a `key = value`
//! config file (`--config`, or the `PROTESTSEQ_CONFIG` environment variable),
//! then command-line flags. Exit codes: 0 success, 1 verification failure,
//! 2 usage or config error, 3 data/model mismatch.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::corpus::{self, normalize_text, tokenize, SynthConfig};
use crate::dataio::{
    load_entity_vocab, load_tag_vocab, read_jsonl_classification, read_tag_file, validate_iob,
    write_jsonl, write_tag_file, CheckpointMeta, ClassRecord, EntityVocabulary, TagRecord,
    TagVocabulary,
};
use crate::embeddings::{load_vector_table, Embedder, OovMode, OovPolicy, VectorTable};
use crate::metrics::{classification_report, tagging_report};
use crate::models::{
    self, build_classifier, build_tagger, verify, AnyModel, ClassExample, RoleExample, TaskData,
    TaskHead, TrainConfig,
};
use crate::nn::TensorSet;
use crate::pipeline::{Pipeline, PipelineError};

pub const EXIT_VERIFICATION: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_DATA: u8 = 3;

/// Scripting contract: `Usage` exits 2 (bad flags, bad config, missing or
/// empty inputs), `Data` exits 3 (malformed files, shape or architecture
/// mismatches), `Verification` exits 1 (a gradient check failed).
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Verification(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Verification(m) => {
                f.write_str(m)
            }
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Verification(_) => EXIT_VERIFICATION,
        }
    }
}

fn file_missing(source: &std::io::Error) -> bool {
    source.kind() == std::io::ErrorKind::NotFound
}

impl From<crate::dataio::DataError> for CliError {
    fn from(e: crate::dataio::DataError) -> Self {
        match &e {
            // Pointing a flag at a file that does not exist is a usage
            // mistake; everything else about a file is a data problem.
            crate::dataio::DataError::Io { source, .. } if file_missing(source) => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<crate::embeddings::EmbedError> for CliError {
    fn from(e: crate::embeddings::EmbedError) -> Self {
        match &e {
            crate::embeddings::EmbedError::Io { source, .. } if file_missing(source) => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<crate::corpus::CorpusError> for CliError {
    fn from(e: crate::corpus::CorpusError) -> Self {
        // Its only variant today is a bad synthesis config.
        CliError::Usage(e.to_string())
    }
}

impl From<crate::models::ModelError> for CliError {
    fn from(e: crate::models::ModelError) -> Self {
        match &e {
            crate::models::ModelError::EmptyDataset(_)
            | crate::models::ModelError::MissingDataset(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<crate::metrics::MetricsError> for CliError {
    fn from(e: crate::metrics::MetricsError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match &e {
            PipelineError::Data(crate::dataio::DataError::Io { source, .. })
            | PipelineError::Embed(crate::embeddings::EmbedError::Io { source, .. })
                if file_missing(source) =>
            {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "protestseq",
    version,
    about = "Multitask recurrent models for protest news: document/sentence \
             classification and token-level role tagging"
)]
pub struct Cli {
    /// Config file with `key = value` lines; flags override its entries.
    /// Falls back to the PROTESTSEQ_CONFIG environment variable.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic labeled corpus for smoke tests and examples.
    Synth(SynthArgs),
    /// Train a model and write checkpoint + history into a directory.
    Train(TrainArgs),
    /// Score a checkpoint against labeled data, printing a JSON report.
    Evaluate(EvaluateArgs),
    /// Run a checkpoint over unlabeled inputs.
    Predict(PredictArgs),
    /// Verify analytic gradients of both architectures against finite
    /// differences.
    Gradcheck(GradcheckArgs),
    /// Describe a checkpoint: architecture, shapes, vocabularies, config.
    Inspect(InspectArgs),
}

pub fn main_entry() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg_map = load_config_map(cli.config.as_deref())?;
    match cli.command {
        Command::Synth(args) => cmd_synth(args, &cfg_map),
        Command::Train(args) => cmd_train(args, &cfg_map),
        Command::Evaluate(args) => cmd_evaluate(args, &cfg_map),
        Command::Predict(args) => cmd_predict(args, &cfg_map),
        Command::Gradcheck(args) => cmd_gradcheck(args, &cfg_map),
        Command::Inspect(args) => cmd_inspect(args),
    }
}

// ---------------------------------------------------------------------------
// Config file
// ---------------------------------------------------------------------------

type ConfigMap = BTreeMap<String, String>;

/// Parses `key = value` lines. Blank lines and `#` comment lines are
/// skipped; unrecognized keys are ignored so one file can serve several
/// subcommands. Later duplicates win.
fn load_config_map(flag: Option<&Path>) -> Result<ConfigMap, CliError> {
    let path = match flag {
        Some(p) => Some(p.to_path_buf()),
        None => std::env::var_os("PROTESTSEQ_CONFIG").map(PathBuf::from),
    };
    let Some(path) = path else {
        return Ok(ConfigMap::new());
    };
    let text = std::fs::read_to_string(&path).map_err(|e| {
        CliError::Usage(format!("cannot read config {}: {e}", path.display()))
    })?;
    let mut map = ConfigMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::Usage(format!(
                "{}, line {}: expected `key = value`, got {line:?}",
                path.display(),
                i + 1
            )));
        };
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

/// Flag value if given, else the config-file entry, else the default.
fn pick<T: FromStr + Copy>(
    flag: Option<T>,
    map: &ConfigMap,
    key: &str,
    default: T,
) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    if let Some(v) = flag {
        return Ok(v);
    }
    match map.get(key) {
        Some(raw) => raw.parse().map_err(|e| {
            CliError::Usage(format!("config key {key}: cannot parse {raw:?}: {e}"))
        }),
        None => Ok(default),
    }
}

fn pick_opt<T: FromStr + Copy>(
    flag: Option<T>,
    map: &ConfigMap,
    key: &str,
) -> Result<Option<T>, CliError>
where
    T::Err: std::fmt::Display,
{
    if flag.is_some() {
        return Ok(flag);
    }
    match map.get(key) {
        Some(raw) => raw
            .parse()
            .map(Some)
            .map_err(|e| CliError::Usage(format!("config key {key}: cannot parse {raw:?}: {e}"))),
        None => Ok(None),
    }
}

fn pick_path(flag: Option<PathBuf>, map: &ConfigMap, key: &str) -> Option<PathBuf> {
    flag.or_else(|| map.get(key).map(PathBuf::from))
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
struct SynthArgs {
    /// Output directory for the generated corpus files.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Protest-positive examples to generate.
    #[arg(long)]
    pos: Option<usize>,
    #[arg(long)]
    neg: Option<usize>,
    /// Distinct filler words in the synthetic vocabulary.
    #[arg(long)]
    filler_vocab: Option<usize>,
    #[arg(long)]
    min_len: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    /// Fraction of each file held out as the dev split.
    #[arg(long)]
    dev_fraction: Option<f64>,
}

#[derive(Serialize)]
struct SynthManifest<'a> {
    seed: u64,
    n_positive: usize,
    n_negative: usize,
    filler_vocab_size: usize,
    min_len: usize,
    max_len: usize,
    dev_fraction: f64,
    counts: BTreeMap<&'a str, usize>,
}

fn cmd_synth(args: SynthArgs, map: &ConfigMap) -> Result<(), CliError> {
    let cfg = SynthConfig {
        seed: pick(args.seed, map, "seed", 42)?,
        n_positive: pick(args.pos, map, "pos", 400)?,
        n_negative: pick(args.neg, map, "neg", 400)?,
        filler_vocab_size: pick(args.filler_vocab, map, "filler_vocab", 120)?,
        min_len: pick(args.min_len, map, "min_len", 6)?,
        max_len: pick(args.max_len, map, "max_len", 18)?,
    };
    let dev_fraction = pick(args.dev_fraction, map, "dev_fraction", 0.2)?;
    if !(0.0..1.0).contains(&dev_fraction) {
        return Err(CliError::Usage(format!(
            "dev_fraction must be in [0, 1), got {dev_fraction}"
        )));
    }
    let corpus = corpus::generate(&cfg)?;
    std::fs::create_dir_all(&args.out)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", args.out.display())))?;

    let class_records: Vec<ClassRecord> = corpus
        .classification
        .iter()
        .map(|r| ClassRecord {
            id: r.id.clone(),
            text: r.text.clone(),
            label: Some(r.label),
        })
        .collect();
    let (class_train, class_dev) = corpus::split_dev(class_records, dev_fraction);

    let tag_records: Vec<TagRecord> = corpus
        .tagged
        .iter()
        .map(|r| TagRecord {
            tokens: r.tokens.clone(),
            tags: r.tags.clone(),
            entities: Some(r.entities.clone()),
        })
        .collect();
    let (tags_train, tags_dev) = corpus::split_dev(tag_records, dev_fraction);

    write_jsonl(args.out.join("class_train.jsonl"), class_train.iter())?;
    write_jsonl(args.out.join("class_dev.jsonl"), class_dev.iter())?;
    write_tag_file(args.out.join("tags_train.tsv"), &tags_train)?;
    write_tag_file(args.out.join("tags_dev.tsv"), &tags_dev)?;

    let manifest = SynthManifest {
        seed: cfg.seed,
        n_positive: cfg.n_positive,
        n_negative: cfg.n_negative,
        filler_vocab_size: cfg.filler_vocab_size,
        min_len: cfg.min_len,
        max_len: cfg.max_len,
        dev_fraction,
        counts: BTreeMap::from([
            ("class_train", class_train.len()),
            ("class_dev", class_dev.len()),
            ("tags_train", tags_train.len()),
            ("tags_dev", tags_dev.len()),
        ]),
    };
    write_text(
        &args.out.join("manifest.json"),
        &format!("{}\n", serde_json::to_string_pretty(&manifest).expect("manifest serializes")),
    )?;
    eprintln!(
        "wrote {} classification and {} tagged examples to {}",
        class_train.len() + class_dev.len(),
        tags_train.len() + tags_dev.len(),
        args.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// task=path specs
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default)]
struct TaskPaths {
    doc: Option<PathBuf>,
    sent: Option<PathBuf>,
    role: Option<PathBuf>,
}

/// Parses repeated `task=path` values. A bare path is shorthand for using
/// the same file for both classification tasks (`doc` and `sent`).
fn parse_task_specs(specs: &[String], flag: &str) -> Result<TaskPaths, CliError> {
    let mut out = TaskPaths::default();
    let set = |slot: &mut Option<PathBuf>, task: &str, path: &str| {
        if slot.is_some() {
            return Err(CliError::Usage(format!("{flag} {task}= given twice")));
        }
        *slot = Some(PathBuf::from(path));
        Ok(())
    };
    for spec in specs {
        match spec.split_once('=') {
            Some(("doc", path)) => set(&mut out.doc, "doc", path)?,
            Some(("sent", path)) => set(&mut out.sent, "sent", path)?,
            Some(("role", path)) => set(&mut out.role, "role", path)?,
            Some((other, _)) => {
                return Err(CliError::Usage(format!(
                    "{flag}: unknown task {other:?} (expected doc, sent, or role)"
                )))
            }
            None => {
                set(&mut out.doc, "doc", spec)?;
                set(&mut out.sent, "sent", spec)?;
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
struct TrainArgs {
    /// Architecture: `classifier` or `tagger`.
    #[arg(long)]
    arch: Option<String>,
    /// Labeled training data as `task=path` (tasks: doc, sent, role); a bare
    /// path serves both doc and sent. Repeatable.
    #[arg(long = "train", value_name = "TASK=PATH")]
    train: Vec<String>,
    /// Held-out data to score after training, same syntax as --train.
    #[arg(long = "dev", value_name = "TASK=PATH")]
    dev: Vec<String>,
    /// Output directory for model.pseq and history.json.
    #[arg(long)]
    out: PathBuf,
    /// Pretrained word vectors (text format). Without them, every token is
    /// embedded by the seeded-hash fallback.
    #[arg(long)]
    vectors: Option<PathBuf>,
    /// Role name list for the tagger (one per line); default: the built-in
    /// eight protest roles.
    #[arg(long)]
    tags_vocab: Option<PathBuf>,
    /// Entity label list for the tagger (NONE first); default: NONE plus the
    /// 18 OntoNotes types.
    #[arg(long)]
    entities_vocab: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batches_per_task: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    rmsprop_decay: Option<f64>,
    #[arg(long)]
    rmsprop_epsilon: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threshold: Option<f64>,
    /// Total width of the role branch's bidirectional layer (tagger).
    #[arg(long)]
    role_hidden_units: Option<usize>,
    /// Embedding dimension when no vector file fixes it.
    #[arg(long)]
    embedding_dim: Option<usize>,
    /// Lowercase text during normalization (true/false).
    #[arg(long)]
    lowercase: Option<bool>,
    /// Seed for the out-of-vocabulary hash embedding.
    #[arg(long)]
    hash_seed: Option<u64>,
}

fn resolve_train_config(args: &TrainArgs, map: &ConfigMap) -> Result<TrainConfig, CliError> {
    let d = TrainConfig::default();
    Ok(TrainConfig {
        epochs: pick(args.epochs, map, "epochs", d.epochs)?,
        batches_per_task: pick(args.batches_per_task, map, "batches_per_task", d.batches_per_task)?,
        batch_size: pick(args.batch_size, map, "batch_size", d.batch_size)?,
        learning_rate: pick(args.lr, map, "lr", d.learning_rate)?,
        rmsprop_decay: pick(args.rmsprop_decay, map, "rmsprop_decay", d.rmsprop_decay)?,
        rmsprop_epsilon: pick(args.rmsprop_epsilon, map, "rmsprop_epsilon", d.rmsprop_epsilon)?,
        dropout: pick_opt(args.dropout, map, "dropout")?,
        run_seed: pick(args.seed, map, "seed", d.run_seed)?,
        threshold: pick(args.threshold, map, "threshold", d.threshold)?,
        classifier_units: pick(None, map, "classifier_units", d.classifier_units)?,
        tagger_shared_units: pick(None, map, "tagger_shared_units", d.tagger_shared_units)?,
        role_hidden_units: pick(args.role_hidden_units, map, "role_hidden_units", d.role_hidden_units)?,
    })
}

enum Arch {
    Classifier,
    Tagger,
}

fn resolve_arch(flag: Option<&str>, map: &ConfigMap) -> Result<Arch, CliError> {
    let name = match flag {
        Some(v) => v.to_string(),
        None => map
            .get("arch")
            .cloned()
            .ok_or_else(|| CliError::Usage("--arch (classifier|tagger) is required".into()))?,
    };
    match name.as_str() {
        "classifier" => Ok(Arch::Classifier),
        "tagger" => Ok(Arch::Tagger),
        other => Err(CliError::Usage(format!(
            "unknown architecture {other:?} (expected classifier or tagger)"
        ))),
    }
}

fn load_class_examples(
    path: &Path,
    lowercase: bool,
    require_labels: bool,
) -> Result<(Vec<ClassExample>, Vec<ClassRecord>), CliError> {
    let records = read_jsonl_classification(path)?;
    let mut examples = Vec::with_capacity(records.len());
    for rec in &records {
        let label = match rec.label {
            Some(l) => l,
            None if require_labels => {
                return Err(CliError::Data(format!(
                    "{}: record {:?} has no label",
                    path.display(),
                    rec.id
                )))
            }
            None => 0,
        };
        examples.push(ClassExample {
            tokens: tokenize(&normalize_text(&rec.text, lowercase)),
            label,
        });
    }
    Ok((examples, records))
}

fn lowercase_tokens(tokens: &[String], lowercase: bool) -> Vec<String> {
    if lowercase {
        tokens.iter().map(|t| t.to_lowercase()).collect()
    } else {
        tokens.to_vec()
    }
}

/// Tag-file sentences to role training examples: IOB repaired, tags and
/// entity labels mapped to ids. Unknown gold tags are fatal; unknown entity
/// labels degrade to NONE with one summary warning.
fn load_role_examples(
    path: &Path,
    lowercase: bool,
    tag_vocab: &TagVocabulary,
    entity_vocab: &EntityVocabulary,
) -> Result<Vec<RoleExample>, CliError> {
    let records = read_tag_file(path)?;
    let mut examples = Vec::with_capacity(records.len());
    let mut iob_warnings = 0usize;
    let mut unknown_entities = 0usize;
    for (i, rec) in records.iter().enumerate() {
        let (tags, warnings) = validate_iob(&rec.tags, true);
        if !warnings.is_empty() {
            iob_warnings += warnings.len();
        }
        let mut tag_ids = Vec::with_capacity(tags.len());
        for tag in &tags {
            let id = tag_vocab.tag_id(tag).ok_or_else(|| {
                CliError::Data(format!(
                    "{}, sentence {}: tag {tag:?} is not in the tag vocabulary; \
                     pass --tags-vocab with the right role list",
                    path.display(),
                    i + 1
                ))
            })?;
            tag_ids.push(id);
        }
        let entity_ids = match &rec.entities {
            Some(labels) => labels
                .iter()
                .map(|l| {
                    entity_vocab.id(l).unwrap_or_else(|| {
                        unknown_entities += 1;
                        0
                    })
                })
                .collect(),
            None => vec![0; rec.tokens.len()],
        };
        examples.push(RoleExample {
            tokens: lowercase_tokens(&rec.tokens, lowercase),
            tag_ids,
            entity_ids,
        });
    }
    if iob_warnings > 0 {
        eprintln!(
            "warning: {}: repaired {iob_warnings} IOB continuity violation(s)",
            path.display()
        );
    }
    if unknown_entities > 0 {
        eprintln!(
            "warning: {}: {unknown_entities} unknown entity label(s) treated as NONE",
            path.display()
        );
    }
    Ok(examples)
}

fn cmd_train(args: TrainArgs, map: &ConfigMap) -> Result<(), CliError> {
    let arch = resolve_arch(args.arch.as_deref(), map)?;
    let cfg = resolve_train_config(&args, map)?;
    let lowercase = pick(args.lowercase, map, "lowercase", true)?;
    let hash_seed = pick(args.hash_seed, map, "hash_seed", 0)?;
    let train_paths = parse_task_specs(&args.train, "--train")?;
    let dev_paths = parse_task_specs(&args.dev, "--dev")?;

    let doc_path = train_paths
        .doc
        .as_ref()
        .ok_or_else(|| CliError::Usage("--train doc=PATH (or a bare path) is required".into()))?;
    let sent_path = train_paths
        .sent
        .as_ref()
        .ok_or_else(|| CliError::Usage("--train sent=PATH (or a bare path) is required".into()))?;
    if matches!(arch, Arch::Classifier) && train_paths.role.is_some() {
        return Err(CliError::Usage(
            "the classifier has no role task; drop --train role= or use --arch tagger".into(),
        ));
    }
    if matches!(arch, Arch::Tagger) && train_paths.role.is_none() {
        return Err(CliError::Usage(
            "the tagger needs --train role=PATH with IOB-tagged sentences".into(),
        ));
    }

    // Embeddings: a vector table fixes the dimension; otherwise everything
    // goes through the seeded-hash fallback at the configured dimension.
    let vectors_path = pick_path(args.vectors, map, "vectors");
    let oov = OovPolicy {
        mode: OovMode::SeededHash,
        hash_seed,
        ..OovPolicy::default()
    };
    let embedding_dim_flag = pick_opt(args.embedding_dim, map, "embedding_dim")?;
    let table = match &vectors_path {
        Some(p) => {
            let table = load_vector_table(p, None)?;
            if let Some(dim) = embedding_dim_flag {
                if dim != table.dim() {
                    return Err(CliError::Usage(format!(
                        "embedding_dim {dim} disagrees with the {}-dimensional vectors in {}",
                        table.dim(),
                        p.display()
                    )));
                }
            }
            table
        }
        None => VectorTable::empty(embedding_dim_flag.unwrap_or(100)),
    };
    let dim = table.dim();
    let embedder = Embedder::new(table, oov)?;

    // Datasets.
    let (doc_examples, _) = load_class_examples(doc_path, lowercase, true)?;
    let (sent_examples, _) = load_class_examples(sent_path, lowercase, true)?;

    let mut data = TaskData {
        doc: doc_examples,
        sent: sent_examples,
        role: Vec::new(),
    };

    let (mut model, roles, entity_labels) = match arch {
        Arch::Classifier => (
            AnyModel::Classifier(build_classifier(dim, &cfg)?),
            None,
            None,
        ),
        Arch::Tagger => {
            let tag_vocab = match pick_path(args.tags_vocab, map, "tags_vocab") {
                Some(p) => load_tag_vocab(&p)?,
                None => TagVocabulary::default_roles(),
            };
            let entity_vocab = match pick_path(args.entities_vocab, map, "entities_vocab") {
                Some(p) => load_entity_vocab(&p)?,
                None => EntityVocabulary::default(),
            };
            data.role = load_role_examples(
                train_paths.role.as_ref().expect("checked above"),
                lowercase,
                &tag_vocab,
                &entity_vocab,
            )?;
            let model = build_tagger(dim, entity_vocab.len(), tag_vocab.len(), &cfg)?;
            (
                AnyModel::Tagger(model),
                Some(tag_vocab.roles().to_vec()),
                Some(entity_vocab.labels().to_vec()),
            )
        }
    };

    eprintln!(
        "training {} for {} epochs ({} batches/task, batch size {}, seed {})",
        model.arch_name(),
        cfg.epochs,
        cfg.batches_per_task,
        cfg.batch_size,
        cfg.run_seed
    );
    let history = models::train_multitask(&mut model, &data, &embedder, &cfg)?;
    if let Some(last) = history.epochs.last() {
        eprintln!(
            "final losses: doc {:.4} sent {:.4}{}",
            last.doc_loss,
            last.sent_loss,
            last.role_loss
                .map(|l| format!(" role {l:.4}"))
                .unwrap_or_default()
        );
    }

    std::fs::create_dir_all(&args.out)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", args.out.display())))?;
    let meta = CheckpointMeta {
        spec: model.spec(),
        threshold: cfg.threshold,
        lowercase,
        oov,
        pad_length: Some(history.pad_length),
        roles,
        entity_labels,
        train_config: cfg.clone(),
    };
    let model_path = args.out.join("model.pseq");
    crate::dataio::save_checkpoint(&model_path, &model, &meta)?;

    #[derive(Serialize)]
    struct HistoryFile<'a> {
        config: &'a TrainConfig,
        lowercase: bool,
        hash_seed: u64,
        epochs: &'a [models::EpochSummary],
    }
    write_text(
        &args.out.join("history.json"),
        &format!(
            "{}\n",
            serde_json::to_string_pretty(&HistoryFile {
                config: &cfg,
                lowercase,
                hash_seed,
                epochs: &history.epochs,
            })
            .expect("history serializes")
        ),
    )?;
    eprintln!("wrote {}", model_path.display());

    // Optional held-out scoring, reusing the persisted checkpoint so the dev
    // numbers reflect exactly what was saved.
    if dev_paths.doc.is_some() || dev_paths.sent.is_some() || dev_paths.role.is_some() {
        let pipeline = Pipeline::from_checkpoint(&model_path, vectors_path.as_deref())?;
        let outcome = evaluate_tasks(&pipeline, &dev_paths, false)?;
        let echo = EvalEcho::new(&model_path, vectors_path.as_deref(), &dev_paths, false, false);
        write_text(
            &args.out.join("dev_metrics.json"),
            &eval_json(&outcome, &echo, false),
        )?;
        eprint!("{}", eval_table(&outcome));
        eprintln!("wrote {}", args.out.join("dev_metrics.json").display());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Checkpoint to score.
    #[arg(long)]
    model: PathBuf,
    /// Labeled data as `task=path` (doc, sent, role); bare path = doc and
    /// sent. Repeatable.
    #[arg(long = "data", value_name = "TASK=PATH")]
    data: Vec<String>,
    #[arg(long)]
    vectors: Option<PathBuf>,
    /// Count the O tag in the weighted tagging average.
    #[arg(long)]
    include_o: bool,
    /// Add exact-match span scores to the role report (token-level scoring
    /// is always present and is the primary reading).
    #[arg(long)]
    span_level: bool,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

struct EvalOutcome {
    doc: Option<crate::metrics::ClassificationReport>,
    sent: Option<crate::metrics::ClassificationReport>,
    role: Option<crate::metrics::TaggingReport>,
}

/// The resolved inputs, echoed into every report so a result can always be
/// traced back to what produced it.
#[derive(Serialize)]
struct EvalEcho {
    model: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    vectors: Option<String>,
    data: BTreeMap<&'static str, String>,
    include_o: bool,
    span_level: bool,
}

impl EvalEcho {
    fn new(
        model: &Path,
        vectors: Option<&Path>,
        paths: &TaskPaths,
        include_o: bool,
        span_level: bool,
    ) -> Self {
        let mut data = BTreeMap::new();
        if let Some(p) = &paths.doc {
            data.insert("doc", p.display().to_string());
        }
        if let Some(p) = &paths.sent {
            data.insert("sent", p.display().to_string());
        }
        if let Some(p) = &paths.role {
            data.insert("role", p.display().to_string());
        }
        EvalEcho {
            model: model.display().to_string(),
            vectors: vectors.map(|p| p.display().to_string()),
            data,
            include_o,
            span_level,
        }
    }
}

fn eval_json(outcome: &EvalOutcome, echo: &EvalEcho, span_level: bool) -> String {
    let mut root = serde_json::Map::new();
    root.insert(
        "config".into(),
        serde_json::to_value(echo).expect("echo serializes"),
    );
    if let Some(r) = &outcome.doc {
        root.insert("doc".into(), serde_json::to_value(r).expect("report serializes"));
    }
    if let Some(r) = &outcome.sent {
        root.insert("sent".into(), serde_json::to_value(r).expect("report serializes"));
    }
    if let Some(r) = &outcome.role {
        let mut value = serde_json::to_value(r).expect("report serializes");
        if !span_level {
            value.as_object_mut().expect("role report is an object").remove("spans");
        }
        root.insert("role".into(), value);
    }
    format!(
        "{}\n",
        serde_json::to_string_pretty(&serde_json::Value::Object(root))
            .expect("report serializes")
    )
}

/// Plain-text score tables, one row per split and scorer.
fn eval_table(outcome: &EvalOutcome) -> String {
    use std::fmt::Write as _;
    let mut out = String::new();
    let class_rows = [("document", &outcome.doc), ("sentence", &outcome.sent)];
    if class_rows.iter().any(|(_, r)| r.is_some()) {
        let _ = writeln!(
            out,
            "{:<12} {:>9} {:>9} {:>9} {:>9} {:>9}",
            "task", "accuracy", "precision", "recall", "f1", "support"
        );
        for (name, report) in class_rows {
            if let Some(r) = report {
                let _ = writeln!(
                    out,
                    "{:<12} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>9}",
                    name, r.accuracy, r.precision, r.recall, r.f1, r.support
                );
            }
        }
    }
    if let Some(r) = &outcome.role {
        if !out.is_empty() {
            let _ = writeln!(out);
        }
        let _ = writeln!(
            out,
            "{:<14} {:>9} {:>9} {:>9} {:>9}",
            "role", "precision", "recall", "f1", "support"
        );
        for (role, p) in &r.per_role {
            let _ = writeln!(
                out,
                "{:<14} {:>9.4} {:>9.4} {:>9.4} {:>9}",
                role, p.precision, p.recall, p.f1, p.support
            );
        }
        let _ = writeln!(
            out,
            "{:<14} {:>9.4} {:>9.4} {:>9.4} {:>9}",
            "weighted", r.role_weighted.precision, r.role_weighted.recall,
            r.role_weighted.f1, r.role_weighted.support
        );
        let _ = writeln!(out, "token accuracy {:.4}", r.token_accuracy);
    }
    out
}

fn evaluate_classification(
    pipeline: &Pipeline,
    path: &Path,
    head: TaskHead,
) -> Result<crate::metrics::ClassificationReport, CliError> {
    let records = read_jsonl_classification(path)?;
    if records.is_empty() {
        return Err(CliError::Usage(format!(
            "{}: dataset is empty, nothing to score",
            path.display()
        )));
    }
    let mut pred = Vec::with_capacity(records.len());
    let mut gold = Vec::with_capacity(records.len());
    let mut skipped = 0usize;
    for rec in &records {
        let label = rec.label.ok_or_else(|| {
            CliError::Data(format!(
                "{}: record {:?} has no label to score against",
                path.display(),
                rec.id
            ))
        })?;
        match pipeline.classify_text(&rec.text) {
            Ok(scores) => {
                pred.push(match head {
                    TaskHead::Doc => scores.label_doc,
                    _ => scores.label_sent,
                });
                gold.push(label);
            }
            Err(PipelineError::EmptyInput) => skipped += 1,
            Err(e) => return Err(e.into()),
        }
    }
    if skipped > 0 {
        eprintln!(
            "warning: {}: skipped {skipped} record(s) with no tokens",
            path.display()
        );
    }
    Ok(classification_report(&pred, &gold)?)
}

fn evaluate_role(
    pipeline: &Pipeline,
    path: &Path,
    include_o: bool,
) -> Result<crate::metrics::TaggingReport, CliError> {
    let records = read_tag_file(path)?;
    if records.is_empty() {
        return Err(CliError::Usage(format!(
            "{}: dataset is empty, nothing to score",
            path.display()
        )));
    }
    let mut pred = Vec::with_capacity(records.len());
    let mut gold = Vec::with_capacity(records.len());
    for rec in &records {
        let tagged = pipeline.tag_tokens(&rec.tokens, rec.entities.as_deref())?;
        for w in &tagged.warnings {
            eprintln!("warning: {}: {w}", path.display());
        }
        pred.push(tagged.tags);
        gold.push(rec.tags.clone());
    }
    Ok(tagging_report(&pred, &gold, include_o)?)
}

fn evaluate_tasks(
    pipeline: &Pipeline,
    paths: &TaskPaths,
    include_o: bool,
) -> Result<EvalOutcome, CliError> {
    if paths.role.is_some() && pipeline.tag_vocab().is_none() {
        return Err(CliError::Data(
            "this checkpoint is a classifier; it cannot score the role task".into(),
        ));
    }
    Ok(EvalOutcome {
        doc: paths
            .doc
            .as_ref()
            .map(|p| evaluate_classification(pipeline, p, TaskHead::Doc))
            .transpose()?,
        sent: paths
            .sent
            .as_ref()
            .map(|p| evaluate_classification(pipeline, p, TaskHead::Sent))
            .transpose()?,
        role: paths
            .role
            .as_ref()
            .map(|p| evaluate_role(pipeline, p, include_o))
            .transpose()?,
    })
}

fn cmd_evaluate(args: EvaluateArgs, map: &ConfigMap) -> Result<(), CliError> {
    if args.data.is_empty() {
        return Err(CliError::Usage(
            "--data task=PATH is required (tasks: doc, sent, role)".into(),
        ));
    }
    let paths = parse_task_specs(&args.data, "--data")?;
    let vectors = pick_path(args.vectors, map, "vectors");
    let pipeline = Pipeline::from_checkpoint(&args.model, vectors.as_deref())?;
    let outcome = evaluate_tasks(&pipeline, &paths, args.include_o)?;
    let echo = EvalEcho::new(
        &args.model,
        vectors.as_deref(),
        &paths,
        args.include_o,
        args.span_level,
    );
    let json = eval_json(&outcome, &echo, args.span_level);
    let table = eval_table(&outcome);
    // The JSON is the machine artifact, the table the human one; whichever
    // stream the JSON takes, the table goes to the other.
    match &args.out {
        Some(path) => {
            write_text(path, &json)?;
            emit(&table)?;
        }
        None => {
            emit(&json)?;
            eprint!("{table}");
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// predict
// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
struct PredictArgs {
    /// Checkpoint to run.
    #[arg(long)]
    model: PathBuf,
    /// Classifier: JSONL with `id` and `text`. Tagger: tab-separated
    /// `token<TAB>tag[<TAB>entity]` sentences; the tag column is ignored and
    /// entities are used when present.
    #[arg(long)]
    input: PathBuf,
    /// Output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    vectors: Option<PathBuf>,
    /// Repair IOB continuity in the predicted tags (I- without a matching
    /// opener becomes B-). Tagger checkpoints only.
    #[arg(long)]
    repair_iob: bool,
}

#[derive(Serialize)]
struct PredictionRow<'a> {
    id: &'a str,
    p_doc: f64,
    label_doc: u8,
    p_sent: f64,
    label_sent: u8,
}

fn cmd_predict(args: PredictArgs, map: &ConfigMap) -> Result<(), CliError> {
    let vectors = pick_path(args.vectors, map, "vectors");
    let pipeline = Pipeline::from_checkpoint(&args.model, vectors.as_deref())?;
    if args.repair_iob && pipeline.tag_vocab().is_none() {
        return Err(CliError::Usage(
            "--repair-iob only applies to tagger checkpoints".into(),
        ));
    }
    match pipeline.tag_vocab() {
        None => {
            let records = read_jsonl_classification(&args.input)?;
            let mut lines = String::new();
            for rec in &records {
                let scores = pipeline.classify_text(&rec.text)?;
                let row = PredictionRow {
                    id: &rec.id,
                    p_doc: scores.p_doc,
                    label_doc: scores.label_doc,
                    p_sent: scores.p_sent,
                    label_sent: scores.label_sent,
                };
                lines.push_str(&serde_json::to_string(&row).expect("row serializes"));
                lines.push('\n');
            }
            match &args.out {
                Some(path) => write_text(path, &lines)?,
                None => emit(&lines)?,
            }
        }
        Some(_) => {
            let records = read_tag_file(&args.input)?;
            let mut out_records = Vec::with_capacity(records.len());
            let mut repairs = 0usize;
            for rec in &records {
                let tagged = pipeline.tag_tokens(&rec.tokens, rec.entities.as_deref())?;
                for w in &tagged.warnings {
                    eprintln!("warning: {}: {w}", args.input.display());
                }
                let tags = if args.repair_iob {
                    let (repaired, warnings) = validate_iob(&tagged.tags, true);
                    repairs += warnings.len();
                    repaired
                } else {
                    tagged.tags
                };
                out_records.push(TagRecord {
                    tokens: rec.tokens.clone(),
                    tags,
                    entities: None,
                });
            }
            if repairs > 0 {
                eprintln!("repaired {repairs} IOB continuity violation(s) in the predictions");
            }
            match &args.out {
                Some(path) => write_tag_file(path, &out_records)?,
                None => {
                    let mut text = String::new();
                    for (i, rec) in out_records.iter().enumerate() {
                        if i > 0 {
                            text.push('\n');
                        }
                        for (token, tag) in rec.tokens.iter().zip(rec.tags.iter()) {
                            text.push_str(token);
                            text.push('\t');
                            text.push_str(tag);
                            text.push('\n');
                        }
                    }
                    emit(&text)?;
                }
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long)]
    seed: Option<u64>,
    /// Deliberately corrupt the analytic gradients first. Every check must
    /// then FAIL; use this to prove the harness can catch a broken gradient.
    #[arg(long, hide = true)]
    corrupt_gradients: bool,
}

fn cmd_gradcheck(args: GradcheckArgs, map: &ConfigMap) -> Result<(), CliError> {
    let seed = pick(args.seed, map, "seed", 42)?;
    let reports = verify::run_model_gradchecks(seed, args.corrupt_gradients);
    let mut failures = 0usize;
    let mut worst: Option<&str> = None;
    let mut lines = String::new();
    for r in &reports {
        lines.push_str(&format!("== {} ==\n", r.component));
        for t in &r.report.tensors {
            let ok = t.max_relative_error <= verify::PASS_THRESHOLD;
            if !ok && worst.is_none() {
                worst = Some(&t.name);
            }
            lines.push_str(&format!(
                "{} {:<28} {:.3e}\n",
                if ok { " ok " } else { " BAD" },
                t.name,
                t.max_relative_error
            ));
        }
        let status = if r.passes() { "PASS" } else { "FAIL" };
        if !r.passes() {
            failures += 1;
        }
        lines.push_str(&format!(
            "{status} {} (max relative error {:.3e}, threshold {:.0e})\n",
            r.component,
            r.report.max_relative_error(),
            verify::PASS_THRESHOLD
        ));
    }
    emit(&lines)?;
    if failures > 0 {
        return Err(CliError::Verification(format!(
            "{failures} of {} gradient checks failed, first bad tensor: {}",
            reports.len(),
            worst.unwrap_or("unknown")
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// inspect
// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
struct InspectArgs {
    /// Checkpoint to describe.
    #[arg(long)]
    model: PathBuf,
}

fn cmd_inspect(args: InspectArgs) -> Result<(), CliError> {
    use std::fmt::Write as _;
    let (model, meta) = crate::dataio::load_checkpoint(&args.model)?;
    let mut out = String::new();
    let _ = writeln!(out, "architecture: {}", model.arch_name());
    let _ = writeln!(out, "embedding dimension: {}", model.embedding_dim());
    let _ = writeln!(out, "decision threshold: {}", meta.threshold);
    let _ = writeln!(out, "lowercase: {}", meta.lowercase);
    let _ = writeln!(
        out,
        "oov policy: {:?} (hash seed {})",
        meta.oov.mode, meta.oov.hash_seed
    );
    if let Some(roles) = &meta.roles {
        let _ = writeln!(out, "roles ({}): {}", roles.len(), roles.join(", "));
    }
    if let Some(labels) = &meta.entity_labels {
        let _ = writeln!(out, "entity labels: {}", labels.len());
    }
    let _ = writeln!(out, "parameters: {}", model.flat_len());
    let _ = writeln!(out, "tensors:");
    for (name, len) in model.tensor_sizes() {
        let _ = writeln!(out, "  {name}  [{len}]");
    }
    let _ = writeln!(
        out,
        "train config: {}",
        serde_json::to_string(&meta.train_config).expect("config serializes")
    );
    emit(&out)
}

// ---------------------------------------------------------------------------

fn write_text(path: &Path, content: &str) -> Result<(), CliError> {
    let mut file = std::fs::File::create(path)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?;
    file.write_all(content.as_bytes())
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

/// Prints to stdout. A reader that hangs up early (e.g. `| head`) is not an
/// error; the command still finishes and reports its real exit code.
fn emit(text: &str) -> Result<(), CliError> {
    use std::io::ErrorKind;
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == ErrorKind::BrokenPipe => Ok(()),
        Err(e) => Err(CliError::Data(format!("cannot write to stdout: {e}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_files_parse_key_value_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "# comment\nepochs = 7\n\nseed=9\nname = a b c\n").unwrap();
        let map = load_config_map(Some(&path)).unwrap();
        assert_eq!(map.get("epochs").map(String::as_str), Some("7"));
        assert_eq!(map.get("seed").map(String::as_str), Some("9"));
        assert_eq!(map.get("name").map(String::as_str), Some("a b c"));

        std::fs::write(&path, "this line has no equals\n").unwrap();
        assert!(matches!(
            load_config_map(Some(&path)),
            Err(CliError::Usage(_))
        ));
    }

    #[test]
    fn flags_override_config_which_overrides_defaults() {
        let mut map = ConfigMap::new();
        map.insert("epochs".into(), "30".into());
        assert_eq!(pick(None, &map, "epochs", 100usize).unwrap(), 30);
        assert_eq!(pick(Some(5usize), &map, "epochs", 100).unwrap(), 5);
        assert_eq!(pick(None, &map, "missing", 100usize).unwrap(), 100);
        map.insert("epochs".into(), "not-a-number".into());
        assert!(matches!(
            pick(None, &map, "epochs", 100usize),
            Err(CliError::Usage(_))
        ));
    }

    #[test]
    fn task_specs_accept_named_and_bare_forms() {
        let specs = vec!["doc=a.jsonl".to_string(), "role=r.tsv".to_string()];
        let paths = parse_task_specs(&specs, "--train").unwrap();
        assert_eq!(paths.doc.as_deref(), Some(Path::new("a.jsonl")));
        assert!(paths.sent.is_none());
        assert_eq!(paths.role.as_deref(), Some(Path::new("r.tsv")));

        let bare = parse_task_specs(&["all.jsonl".to_string()], "--train").unwrap();
        assert_eq!(bare.doc.as_deref(), Some(Path::new("all.jsonl")));
        assert_eq!(bare.sent.as_deref(), Some(Path::new("all.jsonl")));

        assert!(matches!(
            parse_task_specs(&["doc=a".to_string(), "doc=b".to_string()], "--train"),
            Err(CliError::Usage(_))
        ));
        assert!(matches!(
            parse_task_specs(&["chapter=a".to_string()], "--train"),
            Err(CliError::Usage(_))
        ));
    }

    #[test]
    fn cli_definition_is_well_formed() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
