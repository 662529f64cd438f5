//! C ABI over the inference pipeline: open a trained checkpoint, classify
//! text, tag token sequences. The generated header lands in
//! `include/protestseq.h` when this crate builds.
//!
//! Conventions:
//! - Every fallible call returns a `PsqStatus`; `PSQ_OK` is 0.
//! - On failure, `psq_last_error()` returns a message for the calling
//!   thread, valid until that thread's next failing call.
//! - Strings are NUL-terminated UTF-8. Pointers documented nullable accept
//!   NULL; all others must be non-NULL.
//! - `psq_tag_tokens` output must be released with `psq_tags_free`.
//! - Handles are not synchronized; share a `PsqPipeline` across threads
//!   only behind the caller's own lock.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use protestseq::dataio::DataError;
use protestseq::embeddings::EmbedError;
use protestseq::pipeline::{Pipeline, PipelineError};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsqStatus {
    PsqOk = 0,
    /// A required pointer argument was NULL.
    PsqNullArgument = 1,
    /// A string argument was not valid UTF-8.
    PsqInvalidUtf8 = 2,
    /// A file could not be read.
    PsqIoError = 3,
    /// The checkpoint or vector file exists but could not be used.
    PsqBadModel = 4,
    /// The operation needs the other architecture.
    PsqWrongArchitecture = 5,
    /// The input had no tokens.
    PsqEmptyInput = 6,
    /// An internal invariant failed; the handle is still usable.
    PsqInternalError = 7,
}

/// Scores from the two sigmoid heads, labels already thresholded.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct PsqClassScores {
    pub p_doc: f64,
    pub p_sent: f64,
    pub label_doc: u8,
    pub label_sent: u8,
}

/// A loaded model plus its embedder; opaque to C.
pub struct PsqPipeline(Pipeline);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn fail(status: PsqStatus, message: impl AsRef<str>) -> PsqStatus {
    let message = message.as_ref().replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(message).expect("NUL stripped above");
    });
    status
}

fn fail_pipeline(err: PipelineError) -> PsqStatus {
    let status = match &err {
        PipelineError::Data(DataError::Io { .. }) => PsqStatus::PsqIoError,
        PipelineError::Data(_) | PipelineError::Model(_) | PipelineError::MetaMismatch(_) => {
            PsqStatus::PsqBadModel
        }
        PipelineError::Embed(EmbedError::Io { .. }) => PsqStatus::PsqIoError,
        PipelineError::Embed(_) => PsqStatus::PsqBadModel,
        PipelineError::WrongArchitecture { .. } => PsqStatus::PsqWrongArchitecture,
        PipelineError::EmptyInput => PsqStatus::PsqEmptyInput,
    };
    fail(status, err.to_string())
}

/// Runs a closure with panics converted to `PsqInternalError`, so an
/// invariant failure never unwinds across the C boundary.
fn guarded(body: impl FnOnce() -> PsqStatus) -> PsqStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".to_string());
            fail(PsqStatus::PsqInternalError, format!("internal error: {msg}"))
        }
    }
}

/// # Safety
/// `ptr` must be NULL or a NUL-terminated string.
unsafe fn utf8_arg<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, PsqStatus> {
    if ptr.is_null() {
        return Err(fail(PsqStatus::PsqNullArgument, format!("{what} is NULL")));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| fail(PsqStatus::PsqInvalidUtf8, format!("{what} is not valid UTF-8")))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn psq_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message for the calling thread's most recent failure; empty string when
/// nothing failed yet. The pointer stays valid until this thread's next
/// failing call.
#[no_mangle]
pub extern "C" fn psq_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Opens a checkpoint, optionally with a pretrained vector table
/// (`vectors_path` may be NULL to embed every token by the checkpoint's
/// out-of-vocabulary policy). On success `*out` owns the pipeline; release
/// it with `psq_pipeline_close`.
///
/// # Safety
/// `model_path` must be a NUL-terminated path; `vectors_path` NULL or the
/// same; `out` must point to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn psq_pipeline_open(
    model_path: *const c_char,
    vectors_path: *const c_char,
    out: *mut *mut PsqPipeline,
) -> PsqStatus {
    guarded(|| {
        if out.is_null() {
            return fail(PsqStatus::PsqNullArgument, "out is NULL");
        }
        let model_path = match utf8_arg(model_path, "model_path") {
            Ok(s) => s,
            Err(status) => return status,
        };
        let vectors = if vectors_path.is_null() {
            None
        } else {
            match utf8_arg(vectors_path, "vectors_path") {
                Ok(s) => Some(s.to_string()),
                Err(status) => return status,
            }
        };
        match Pipeline::from_checkpoint(model_path, vectors.as_ref().map(Path::new)) {
            Ok(pipeline) => {
                *out = Box::into_raw(Box::new(PsqPipeline(pipeline)));
                PsqStatus::PsqOk
            }
            Err(e) => fail_pipeline(e),
        }
    })
}

/// Releases a pipeline. NULL is a no-op.
///
/// # Safety
/// `pipeline` must be NULL or a pointer from `psq_pipeline_open` not yet
/// closed.
#[no_mangle]
pub unsafe extern "C" fn psq_pipeline_close(pipeline: *mut PsqPipeline) {
    if !pipeline.is_null() {
        drop(Box::from_raw(pipeline));
    }
}

/// Architecture of the loaded model: `"classifier"` or `"tagger"` (static
/// strings). NULL input yields `"unknown"`.
///
/// # Safety
/// `pipeline` must be NULL or a live pipeline pointer.
#[no_mangle]
pub unsafe extern "C" fn psq_pipeline_kind(pipeline: *const PsqPipeline) -> *const c_char {
    let Some(p) = pipeline.as_ref() else {
        return c"unknown".as_ptr();
    };
    match p.0.arch_name() {
        "classifier" => c"classifier".as_ptr(),
        _ => c"tagger".as_ptr(),
    }
}

/// Scores one text with both heads. Works for either architecture.
///
/// # Safety
/// `pipeline` must be live, `text` NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn psq_classify_text(
    pipeline: *const PsqPipeline,
    text: *const c_char,
    out: *mut PsqClassScores,
) -> PsqStatus {
    guarded(|| {
        let Some(p) = pipeline.as_ref() else {
            return fail(PsqStatus::PsqNullArgument, "pipeline is NULL");
        };
        if out.is_null() {
            return fail(PsqStatus::PsqNullArgument, "out is NULL");
        }
        let text = match utf8_arg(text, "text") {
            Ok(s) => s,
            Err(status) => return status,
        };
        match p.0.classify_text(text) {
            Ok(scores) => {
                *out = PsqClassScores {
                    p_doc: scores.p_doc,
                    p_sent: scores.p_sent,
                    label_doc: scores.label_doc,
                    label_sent: scores.label_sent,
                };
                PsqStatus::PsqOk
            }
            Err(e) => fail_pipeline(e),
        }
    })
}

/// Tags `n_tokens` tokens (tagger checkpoints only). `entities` may be NULL
/// for no entity features, or an array of `n_tokens` label strings. On
/// success `*out_tags` is an array of `n_tokens` NUL-terminated tag strings;
/// release it with `psq_tags_free(tags, n_tokens)`.
///
/// # Safety
/// `tokens` (and `entities` when non-NULL) must hold `n_tokens` valid
/// NUL-terminated strings; `out_tags` must be writable.
#[no_mangle]
pub unsafe extern "C" fn psq_tag_tokens(
    pipeline: *const PsqPipeline,
    tokens: *const *const c_char,
    n_tokens: usize,
    entities: *const *const c_char,
    out_tags: *mut *mut *mut c_char,
) -> PsqStatus {
    guarded(|| {
        let Some(p) = pipeline.as_ref() else {
            return fail(PsqStatus::PsqNullArgument, "pipeline is NULL");
        };
        if out_tags.is_null() {
            return fail(PsqStatus::PsqNullArgument, "out_tags is NULL");
        }
        if tokens.is_null() && n_tokens > 0 {
            return fail(PsqStatus::PsqNullArgument, "tokens is NULL");
        }

        let read_strings = |base: *const *const c_char, what: &str| -> Result<Vec<String>, PsqStatus> {
            let mut items = Vec::with_capacity(n_tokens);
            for i in 0..n_tokens {
                let s = utf8_arg(*base.add(i), &format!("{what}[{i}]"))?;
                items.push(s.to_string());
            }
            Ok(items)
        };
        let tokens = match read_strings(tokens, "tokens") {
            Ok(v) => v,
            Err(status) => return status,
        };
        let entities = if entities.is_null() {
            None
        } else {
            match read_strings(entities, "entities") {
                Ok(v) => Some(v),
                Err(status) => return status,
            }
        };

        match p.0.tag_tokens(&tokens, entities.as_deref()) {
            Ok(tagged) => {
                let mut raw: Vec<*mut c_char> = tagged
                    .tags
                    .into_iter()
                    .map(|tag| {
                        CString::new(tag.replace('\0', " "))
                            .expect("NUL stripped above")
                            .into_raw()
                    })
                    .collect();
                raw.shrink_to_fit();
                debug_assert_eq!(raw.len(), n_tokens);
                let boxed = raw.into_boxed_slice();
                *out_tags = Box::into_raw(boxed) as *mut *mut c_char;
                PsqStatus::PsqOk
            }
            Err(e) => fail_pipeline(e),
        }
    })
}

/// Frees an array returned by `psq_tag_tokens`. NULL is a no-op; `n_tokens`
/// must be the count passed to the call that produced it.
///
/// # Safety
/// `tags` must be NULL or an unreleased `psq_tag_tokens` result.
#[no_mangle]
pub unsafe extern "C" fn psq_tags_free(tags: *mut *mut c_char, n_tokens: usize) {
    if tags.is_null() {
        return;
    }
    let slice = Box::from_raw(ptr::slice_from_raw_parts_mut(tags, n_tokens));
    for &tag in slice.iter() {
        if !tag.is_null() {
            drop(CString::from_raw(tag));
        }
    }
}
