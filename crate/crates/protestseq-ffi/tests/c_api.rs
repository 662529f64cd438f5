//! Exercises the C surface the way a foreign caller would: raw pointers,
//! NUL-terminated strings, explicit frees, and the status-code contract.

use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::ptr;

use protestseq::dataio::{save_checkpoint, CheckpointMeta};
use protestseq::embeddings::OovPolicy;
use protestseq::models::{build_classifier, build_tagger, AnyModel, TrainConfig};
use protestseq_ffi::{
    psq_classify_text, psq_last_error, psq_pipeline_close, psq_pipeline_kind, psq_pipeline_open,
    psq_tag_tokens, psq_tags_free, psq_version, PsqClassScores, PsqPipeline, PsqStatus,
};

fn write_classifier(dir: &Path) -> CString {
    let cfg = TrainConfig { run_seed: 21, ..TrainConfig::default() };
    let model = AnyModel::Classifier(build_classifier(6, &cfg).unwrap());
    let meta = CheckpointMeta {
        spec: model.spec(),
        threshold: 0.5,
        lowercase: true,
        oov: OovPolicy::default(),
        pad_length: Some(8),
        roles: None,
        entity_labels: None,
        train_config: cfg,
    };
    let path = dir.join("classifier.pseq");
    save_checkpoint(&path, &model, &meta).unwrap();
    CString::new(path.to_str().unwrap()).unwrap()
}

fn write_tagger(dir: &Path) -> CString {
    let cfg = TrainConfig { run_seed: 22, role_hidden_units: 4, ..TrainConfig::default() };
    let roles = vec!["trigger".to_string(), "place".to_string()];
    let labels = vec!["NONE".to_string(), "ORG".to_string()];
    let model = AnyModel::Tagger(build_tagger(6, labels.len(), 1 + 2 * roles.len(), &cfg).unwrap());
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
    CString::new(path.to_str().unwrap()).unwrap()
}

fn open(path: &CString) -> *mut PsqPipeline {
    let mut handle: *mut PsqPipeline = ptr::null_mut();
    let status = unsafe { psq_pipeline_open(path.as_ptr(), ptr::null(), &mut handle) };
    assert_eq!(status, PsqStatus::PsqOk, "open failed: {}", last_error());
    assert!(!handle.is_null());
    handle
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(psq_last_error()) }.to_string_lossy().into_owned()
}

fn kind(handle: *const PsqPipeline) -> String {
    unsafe { CStr::from_ptr(psq_pipeline_kind(handle)) }.to_string_lossy().into_owned()
}

#[test]
fn version_is_a_static_string_and_the_header_exists() {
    let version = unsafe { CStr::from_ptr(psq_version()) }.to_str().unwrap();
    assert!(!version.is_empty());

    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/protestseq.h");
    let text = std::fs::read_to_string(&header).expect("header generated at build time");
    for needle in [
        "typedef struct PsqPipeline PsqPipeline;",
        "psq_pipeline_open",
        "psq_classify_text",
        "psq_tag_tokens",
        "psq_tags_free",
        "PsqWrongArchitecture",
    ] {
        assert!(text.contains(needle), "header is missing {needle}");
    }
}

#[test]
fn classifier_scores_text_and_rejects_tagging() {
    let dir = tempfile::tempdir().unwrap();
    let handle = open(&write_classifier(dir.path()));
    assert_eq!(kind(handle), "classifier");

    let text = CString::new("Protesters blocked the road near the square").unwrap();
    let mut scores = PsqClassScores { p_doc: -1.0, p_sent: -1.0, label_doc: 9, label_sent: 9 };
    let status = unsafe { psq_classify_text(handle, text.as_ptr(), &mut scores) };
    assert_eq!(status, PsqStatus::PsqOk);
    assert!((0.0..=1.0).contains(&scores.p_doc));
    assert!((0.0..=1.0).contains(&scores.p_sent));
    assert_eq!(scores.label_doc, u8::from(scores.p_doc >= 0.5));
    assert_eq!(scores.label_sent, u8::from(scores.p_sent >= 0.5));

    // Same text, same handle: deterministic.
    let mut again = scores;
    let status = unsafe { psq_classify_text(handle, text.as_ptr(), &mut again) };
    assert_eq!(status, PsqStatus::PsqOk);
    assert_eq!(scores.p_doc, again.p_doc);

    let token = CString::new("march").unwrap();
    let tokens = [token.as_ptr()];
    let mut tags: *mut *mut c_char = ptr::null_mut();
    let status =
        unsafe { psq_tag_tokens(handle, tokens.as_ptr(), 1, ptr::null(), &mut tags) };
    assert_eq!(status, PsqStatus::PsqWrongArchitecture);
    assert!(last_error().contains("classifier"), "{}", last_error());

    unsafe { psq_pipeline_close(handle) };
}

#[test]
fn argument_validation_reports_through_last_error() {
    let dir = tempfile::tempdir().unwrap();
    let handle = open(&write_classifier(dir.path()));

    let mut scores = PsqClassScores { p_doc: 0.0, p_sent: 0.0, label_doc: 0, label_sent: 0 };
    let status = unsafe { psq_classify_text(handle, ptr::null(), &mut scores) };
    assert_eq!(status, PsqStatus::PsqNullArgument);
    assert!(last_error().contains("text"));

    let status =
        unsafe { psq_classify_text(handle, c"x".as_ptr(), ptr::null_mut()) };
    assert_eq!(status, PsqStatus::PsqNullArgument);

    let bad = CStr::from_bytes_with_nul(b"\xff\xfe\0").unwrap();
    let status = unsafe { psq_classify_text(handle, bad.as_ptr(), &mut scores) };
    assert_eq!(status, PsqStatus::PsqInvalidUtf8);
    assert!(last_error().contains("UTF-8"));

    unsafe { psq_pipeline_close(handle) };
}

#[test]
fn open_failures_map_to_distinct_statuses() {
    let mut handle: *mut PsqPipeline = ptr::null_mut();

    let missing = CString::new("/nonexistent/model.pseq").unwrap();
    let status = unsafe { psq_pipeline_open(missing.as_ptr(), ptr::null(), &mut handle) };
    assert_eq!(status, PsqStatus::PsqIoError);
    assert!(last_error().contains("/nonexistent/model.pseq"), "{}", last_error());

    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.pseq");
    std::fs::write(&junk, b"not a checkpoint at all").unwrap();
    let junk_c = CString::new(junk.to_str().unwrap()).unwrap();
    let status = unsafe { psq_pipeline_open(junk_c.as_ptr(), ptr::null(), &mut handle) };
    assert_eq!(status, PsqStatus::PsqBadModel);

    let status = unsafe { psq_pipeline_open(ptr::null(), ptr::null(), &mut handle) };
    assert_eq!(status, PsqStatus::PsqNullArgument);

    let good = write_classifier(dir.path());
    let status = unsafe { psq_pipeline_open(good.as_ptr(), ptr::null(), ptr::null_mut()) };
    assert_eq!(status, PsqStatus::PsqNullArgument);
}

#[test]
fn tagger_tags_every_token_and_frees_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let handle = open(&write_tagger(dir.path()));
    assert_eq!(kind(handle), "tagger");

    let words: Vec<CString> = ["police", "stopped", "the", "march"]
        .iter()
        .map(|w| CString::new(*w).unwrap())
        .collect();
    let tokens: Vec<*const c_char> = words.iter().map(|w| w.as_ptr()).collect();

    let mut tags: *mut *mut c_char = ptr::null_mut();
    let status =
        unsafe { psq_tag_tokens(handle, tokens.as_ptr(), tokens.len(), ptr::null(), &mut tags) };
    assert_eq!(status, PsqStatus::PsqOk, "{}", last_error());
    assert!(!tags.is_null());
    for i in 0..tokens.len() {
        let tag = unsafe { CStr::from_ptr(*tags.add(i)) }.to_str().unwrap();
        assert!(
            tag == "O" || tag.starts_with("B-") || tag.starts_with("I-"),
            "unexpected tag {tag}"
        );
    }
    unsafe { psq_tags_free(tags, tokens.len()) };

    // Entity features are accepted, including labels outside the vocabulary.
    let ents: Vec<CString> = ["ORG", "NONE", "NONE", "WHAT"]
        .iter()
        .map(|e| CString::new(*e).unwrap())
        .collect();
    let ent_ptrs: Vec<*const c_char> = ents.iter().map(|e| e.as_ptr()).collect();
    let mut tags2: *mut *mut c_char = ptr::null_mut();
    let status = unsafe {
        psq_tag_tokens(handle, tokens.as_ptr(), tokens.len(), ent_ptrs.as_ptr(), &mut tags2)
    };
    assert_eq!(status, PsqStatus::PsqOk, "{}", last_error());
    unsafe { psq_tags_free(tags2, tokens.len()) };

    let mut tags3: *mut *mut c_char = ptr::null_mut();
    let status = unsafe { psq_tag_tokens(handle, ptr::null(), 0, ptr::null(), &mut tags3) };
    assert_eq!(status, PsqStatus::PsqEmptyInput);
    assert!(tags3.is_null());

    unsafe { psq_pipeline_close(handle) };
    unsafe { psq_pipeline_close(ptr::null_mut()) };
    unsafe { psq_tags_free(ptr::null_mut(), 0) };
}

#[test]
fn error_messages_are_thread_local() {
    let missing = CString::new("/nonexistent/elsewhere.pseq").unwrap();
    let mut handle: *mut PsqPipeline = ptr::null_mut();
    let status = unsafe { psq_pipeline_open(missing.as_ptr(), ptr::null(), &mut handle) };
    assert_eq!(status, PsqStatus::PsqIoError);
    assert!(!last_error().is_empty());

    let other = std::thread::spawn(last_error).join().unwrap();
    assert!(other.is_empty(), "fresh thread saw {other:?}");
}
