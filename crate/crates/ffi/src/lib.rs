//! C ABI for marginlm.
//!
//! Every fallible function returns an `MlmStatus`; on failure the message is
//! available from `mlm_last_error` on the same thread until the next call.
//! Models are opaque handles created by `mlm_model_load` and released with
//! `mlm_model_free`. Sentences are passed as whitespace-separated UTF-8.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use marginlm::checkpoint::load_checkpoint;
use marginlm::losses::corpus_perplexity;
use marginlm::nbest::{read_corpus, read_nbest, write_nbest};
use marginlm::nn::{lm_score, ModelParams};
use marginlm::rescore::{rescore_groups, RescoreConfig};
use marginlm::vocab::Vocabulary;
use marginlm::{metrics, Error};

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MlmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Io = 4,
    Format = 5,
    Checkpoint = 6,
    Numeric = 7,
    Panic = 8,
}

/// A loaded model and its vocabulary.
pub struct MlmModel {
    model: ModelParams,
    vocab: Vocabulary,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_last_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Failure(MlmStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => MlmStatus::Io,
            Error::Format { .. } => MlmStatus::Format,
            Error::Checkpoint(_) => MlmStatus::Checkpoint,
            Error::NonFiniteLoss { .. } => MlmStatus::Numeric,
            _ => MlmStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MlmStatus {
    clear_last_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MlmStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic".to_string());
            MlmStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(MlmStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(MlmStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

unsafe fn model_arg<'a>(p: *const MlmModel) -> Result<&'a MlmModel, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure(MlmStatus::NullPointer, "model is null".to_string()))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| Failure(MlmStatus::NullPointer, format!("{name} is null")))
}

fn tokens(s: &str) -> Vec<&str> {
    s.split_whitespace().collect()
}

/// Message for the last failed call on this thread, or null. Owned by the
/// library; valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn mlm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mlm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint. On success `*out` holds a handle to free with
/// `mlm_model_free`; on failure it is set to null.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mlm_model_load(path: *const c_char, out: *mut *mut MlmModel) -> MlmStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = std::ptr::null_mut();
        let path = PathBuf::from(str_arg(path, "path")?);
        let (model, vocab) = load_checkpoint(&path)?;
        *out = Box::into_raw(Box::new(MlmModel { model, vocab }));
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle from `mlm_model_load` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mlm_model_free(model: *mut MlmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Vocabulary size including the reserved tokens.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mlm_model_vocab_size(
    model: *const MlmModel,
    out: *mut usize,
) -> MlmStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = model_arg(model)?.vocab.len();
        Ok(())
    })
}

/// Natural-log probability of a sentence including the end token.
///
/// # Safety
/// `model` must be a live handle, `sentence` NUL-terminated, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn mlm_lm_score(
    model: *const MlmModel,
    sentence: *const c_char,
    out: *mut f64,
) -> MlmStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let m = model_arg(model)?;
        let ids = m.vocab.encode(&tokens(str_arg(sentence, "sentence")?));
        *out = lm_score(&m.model, &ids)?;
        Ok(())
    })
}

/// Perplexity over a corpus file with one sentence per line.
///
/// # Safety
/// `model` must be a live handle, `corpus_path` NUL-terminated, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn mlm_perplexity(
    model: *const MlmModel,
    corpus_path: *const c_char,
    out: *mut f64,
) -> MlmStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let m = model_arg(model)?;
        let corpus = read_corpus(str_arg(corpus_path, "corpus_path")?)?;
        let ids: Vec<Vec<u32>> = corpus.iter().map(|s| m.vocab.encode(s)).collect();
        *out = corpus_perplexity(&m.model, &ids)?;
        Ok(())
    })
}

/// Word error rate of `hypothesis` against a non-empty `reference`.
///
/// # Safety
/// Both strings must be NUL-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn mlm_wer(
    reference: *const c_char,
    hypothesis: *const c_char,
    out: *mut f64,
) -> MlmStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let r = tokens(str_arg(reference, "reference")?);
        let h = tokens(str_arg(hypothesis, "hypothesis")?);
        *out = metrics::wer(&r, &h)?;
        Ok(())
    })
}

/// Smoothed sentence BLEU in [0, 1] against a single reference.
///
/// # Safety
/// Both strings must be NUL-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn mlm_sentence_bleu(
    reference: *const c_char,
    hypothesis: *const c_char,
    out: *mut f64,
) -> MlmStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let r = tokens(str_arg(reference, "reference")?);
        let h = tokens(str_arg(hypothesis, "hypothesis")?);
        *out = metrics::sentence_bleu(&[r], &h)?;
        Ok(())
    })
}

/// Reranks an n-best JSONL file by task score plus `weight` times the LM
/// score (per token if `length_norm` is nonzero) and writes the result.
///
/// # Safety
/// `model` must be a live handle and both paths NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn mlm_rescore_file(
    model: *const MlmModel,
    in_path: *const c_char,
    out_path: *const c_char,
    weight: f64,
    length_norm: c_int,
) -> MlmStatus {
    guard(|| {
        let m = model_arg(model)?;
        let input = str_arg(in_path, "in_path")?;
        let output = str_arg(out_path, "out_path")?;
        if !(weight.is_finite() && weight >= 0.0) {
            return Err(Failure(
                MlmStatus::InvalidArgument,
                format!("weight must be a nonnegative number, got {weight}"),
            ));
        }
        let cfg = RescoreConfig {
            weight,
            length_norm: length_norm != 0,
            ..RescoreConfig::default()
        };
        let groups = read_nbest(input)?;
        write_nbest(&rescore_groups(&groups, &m.model, &m.vocab, &cfg)?, output)?;
        Ok(())
    })
}
