//! C ABI over the treelstm crate.
//!
//! Handles are opaque; every fallible call returns a status code and
//! stores a human-readable message retrievable with [`tlstm_last_error`].
//! Strings are NUL-terminated UTF-8. The error message pointer stays
//! valid until the next failing call on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::io::BufReader;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use treelstm::embeddings::Vocab;
use treelstm::eval::EvalError;
use treelstm::heads::sparse_target;
use treelstm::model::{predict, EvalExample, HeadParams, ModelParams};
use treelstm::train::{count_params, load_checkpoint, tree_ids, TrainError};
use treelstm::trees::{parse_constituency, read_dependency};
use treelstm::{Error, VariantKind};

/// Status codes: 0 success; 1 configuration/usage; 2 data or I/O;
/// 3 numeric failure; 4 invalid argument (null pointer, bad UTF-8,
/// model/task mismatch).
pub const TLSTM_OK: i32 = 0;
pub const TLSTM_ERR_CONFIG: i32 = 1;
pub const TLSTM_ERR_DATA: i32 = 2;
pub const TLSTM_ERR_NUMERIC: i32 = 3;
pub const TLSTM_ERR_ARG: i32 = 4;

/// Opaque trained-model handle (checkpoint plus its vocabulary).
pub struct TlstmModel {
    model: ModelParams,
    vocab: Vocab,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> i32 {
    match e {
        Error::Config(_) => TLSTM_ERR_CONFIG,
        Error::Io { .. } | Error::Tree(_) | Error::Embedding(_) | Error::Checkpoint(_) => {
            TLSTM_ERR_DATA
        }
        Error::Train(TrainError::NonFinite { .. }) => TLSTM_ERR_NUMERIC,
        Error::Train(_) => TLSTM_ERR_DATA,
        Error::Eval(EvalError::ConstantInput { .. }) => TLSTM_ERR_NUMERIC,
        Error::Eval(_) => TLSTM_ERR_DATA,
        Error::Tensor(_) | Error::Cell(_) | Error::Head(_) => TLSTM_ERR_NUMERIC,
    }
}

fn fail(e: &Error) -> i32 {
    set_error(&e.to_string());
    status_of(e)
}

fn arg_error(msg: &str) -> i32 {
    set_error(msg);
    TLSTM_ERR_ARG
}

/// Run a body that returns a status, converting panics into a numeric
/// failure instead of unwinding across the FFI boundary.
fn guarded<F: FnOnce() -> i32>(body: F) -> i32 {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            TLSTM_ERR_NUMERIC
        }
    }
}

/// # Safety
/// `ptr` must be null or a NUL-terminated string valid for reads.
unsafe fn cstr<'a>(ptr: *const c_char, name: &str) -> Result<&'a str, i32> {
    if ptr.is_null() {
        return Err(arg_error(&format!("{name} is null")));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| arg_error(&format!("{name} is not valid UTF-8")))
}

/// Message for the most recent failure on this thread; empty string when
/// no call has failed yet.
#[no_mangle]
pub extern "C" fn tlstm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Crate version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tlstm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Load a checkpoint (with its `<path>.vocab` sidecar) into a new handle.
/// On success writes the handle to `out`; free it with
/// [`tlstm_model_free`].
///
/// # Safety
/// `path` must be a valid NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tlstm_model_load(path: *const c_char, out: *mut *mut TlstmModel) -> i32 {
    guarded(|| {
        if out.is_null() {
            return arg_error("out is null");
        }
        let path = match cstr(path, "path") {
            Ok(s) => s,
            Err(code) => return code,
        };
        match load_checkpoint(Path::new(path)) {
            Ok((model, vocab)) => {
                *out = Box::into_raw(Box::new(TlstmModel { model, vocab }));
                TLSTM_OK
            }
            Err(e) => fail(&Error::Checkpoint(e)),
        }
    })
}

/// Release a handle returned by [`tlstm_model_load`]. Null is a no-op.
///
/// # Safety
/// `model` must be null or a pointer previously returned by
/// [`tlstm_model_load`] that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn tlstm_model_free(model: *mut TlstmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Classify one labeled-or-unlabeled s-expression sentence with a
/// sentiment model; writes the argmax class index to `class_out`.
///
/// # Safety
/// `model` must be a live handle; `sexpr` a valid NUL-terminated string;
/// `class_out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tlstm_classify_sexpr(
    model: *const TlstmModel,
    sexpr: *const c_char,
    class_out: *mut i32,
) -> i32 {
    guarded(|| {
        if model.is_null() || class_out.is_null() {
            return arg_error("model/class_out is null");
        }
        let h = &*model;
        if !h.model.cfg.task.is_sentiment() {
            return arg_error("checkpoint is not a sentiment model");
        }
        let text = match cstr(sexpr, "sexpr") {
            Ok(s) => s,
            Err(code) => return code,
        };
        let tree = match parse_constituency(text) {
            Ok(t) => t,
            Err(e) => return fail(&Error::Tree(e)),
        };
        let ids = tree_ids(&tree, &h.vocab);
        let ex = if h.model.cfg.variant.is_tree() {
            EvalExample::Root { tree, ids, gold: 0 }
        } else {
            EvalExample::Seq { ids, gold: 0 }
        };
        match predict(&h.model, &ex) {
            Ok(class) => {
                *class_out = class as i32;
                TLSTM_OK
            }
            Err(e) => fail(&e),
        }
    })
}

/// Score the relatedness of two sentences given as CoNLL dependency
/// blocks (`index TAB token TAB head` rows); writes a score in (1, K).
///
/// # Safety
/// `model` must be a live handle; `conll_a`/`conll_b` valid NUL-terminated
/// strings; `score_out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tlstm_relatedness_conll(
    model: *const TlstmModel,
    conll_a: *const c_char,
    conll_b: *const c_char,
    score_out: *mut f64,
) -> i32 {
    guarded(|| {
        if model.is_null() || score_out.is_null() {
            return arg_error("model/score_out is null");
        }
        let h = &*model;
        if !matches!(h.model.net.head, HeadParams::Similarity(_)) {
            return arg_error("checkpoint is not a relatedness model");
        }
        let parse_block = |ptr: *const c_char, name: &str| -> Result<_, i32> {
            let text = cstr(ptr, name)?;
            let mut trees = read_dependency(BufReader::new(text.as_bytes()))
                .map_err(|e| fail(&Error::Tree(e)))?;
            if trees.len() != 1 {
                return Err(arg_error(&format!(
                    "{name} must contain exactly one sentence block, found {}",
                    trees.len()
                )));
            }
            Ok(trees.remove(0))
        };
        let tree_a = match parse_block(conll_a, "conll_a") {
            Ok(t) => t,
            Err(code) => return code,
        };
        let tree_b = match parse_block(conll_b, "conll_b") {
            Ok(t) => t,
            Err(code) => return code,
        };
        let ids_a = tree_ids(&tree_a, &h.vocab);
        let ids_b = tree_ids(&tree_b, &h.vocab);
        let ex = EvalExample::Pair {
            tree_a,
            ids_a,
            tree_b,
            ids_b,
            gold: 0.0,
        };
        match predict(&h.model, &ex) {
            Ok(score) => {
                *score_out = score;
                TLSTM_OK
            }
            Err(e) => fail(&e),
        }
    })
}

/// Composition-function parameter count for a variant name at the given
/// dimensions; 0 for an unknown variant name.
///
/// # Safety
/// `variant` must be null or a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn tlstm_count_params(variant: *const c_char, d: u64, e: u64) -> u64 {
    let result = catch_unwind(AssertUnwindSafe(|| {
        let Ok(name) = cstr(variant, "variant") else {
            return 0;
        };
        match name.parse::<VariantKind>() {
            Ok(v) => count_params(v, d as usize, e as usize) as u64,
            Err(msg) => {
                set_error(&msg);
                0
            }
        }
    }));
    match result {
        Ok(v) => v,
        Err(_) => {
            set_error("internal panic");
            0
        }
    }
}

/// Sparse target distribution over ranks 1..=k for a gold score y in
/// [1, k]; writes k probabilities to `out`.
///
/// # Safety
/// `out` must point to at least `k` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn tlstm_sparse_target(y: f64, k: u32, out: *mut f64) -> i32 {
    guarded(|| {
        if out.is_null() {
            return arg_error("out is null");
        }
        if k == 0 {
            return arg_error("k must be positive");
        }
        match sparse_target(y, k as usize) {
            Ok(p) => {
                std::ptr::copy_nonoverlapping(p.as_slice().as_ptr(), out, k as usize);
                TLSTM_OK
            }
            Err(e) => fail(&Error::Head(e)),
        }
    })
}
