//! C ABI for the rasopt library: opaque handles, status codes, and a
//! thread-local last-error message. The matching header lives at
//! `include/rasopt.h` and is verified against this surface by the crate's
//! tests.
//!
//! Conventions:
//! - Functions return [`RasoptStatus`]; results go through out-pointers.
//! - Handles (`RasoptCorpus`, `RasoptIndex`, `RasoptHits`) are created and
//!   destroyed by this library only; passing anything else is undefined
//!   behavior.
//! - Strings returned as `char*` are owned by the caller and must be freed
//!   with `rasopt_string_free`; strings returned as `const char*` are
//!   borrowed and live only as long as their handle.

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use rasopt::corpus::{load_pairs, select_high_quality, PairFormat, ProgramPair};
use rasopt::harness::{FailReason, Score};
use rasopt::metrics::{
    edit_distance, mean_best_speedup, pct_optimized, timing_correlation, RunResult,
};
use rasopt::retrieval::AnyIndex;

/// Status codes shared with the C header.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RasoptStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    IoError = 3,
    ParseError = 4,
    InvalidArgument = 5,
    InternalError = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let message = message.into();
    let cstring = CString::new(message.replace('\0', " "))
        .unwrap_or_else(|_| CString::new("error message contained NUL").unwrap());
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(cstring));
}

fn fail(status: RasoptStatus, message: impl Into<String>) -> RasoptStatus {
    set_error(message);
    status
}

/// Version string of the underlying library; static storage, do not free.
#[no_mangle]
pub extern "C" fn rasopt_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr() as *const c_char
}

/// The last error message on this thread, or NULL when none is recorded.
/// The caller owns the returned string (free with `rasopt_string_free`).
#[no_mangle]
pub extern "C" fn rasopt_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|slot| match slot.borrow().as_ref() {
        Some(message) => message.clone().into_raw(),
        None => std::ptr::null_mut(),
    })
}

/// Frees a string previously returned by this library.
///
/// # Safety
/// `s` must be a pointer returned by a rasopt function documented as
/// caller-owned, and must not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn rasopt_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}

unsafe fn str_arg<'a>(ptr: *const c_char) -> Result<&'a str, RasoptStatus> {
    if ptr.is_null() {
        return Err(fail(RasoptStatus::NullPointer, "string argument is NULL"));
    }
    unsafe { CStr::from_ptr(ptr) }
        .to_str()
        .map_err(|_| fail(RasoptStatus::InvalidUtf8, "string argument is not UTF-8"))
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Character-level Levenshtein distance.
///
/// # Safety
/// `a` and `b` must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rasopt_edit_distance(
    a: *const c_char,
    b: *const c_char,
    out: *mut u64,
) -> RasoptStatus {
    if out.is_null() {
        return fail(RasoptStatus::NullPointer, "out pointer is NULL");
    }
    let a = match unsafe { str_arg(a) } {
        Ok(s) => s,
        Err(status) => return status,
    };
    let b = match unsafe { str_arg(b) } {
        Ok(s) => s,
        Err(status) => return status,
    };
    unsafe { *out = edit_distance(a, b) as u64 };
    RasoptStatus::Ok
}

/// Clamped speedup of a candidate over the original. A failed candidate
/// (`candidate_failed` true) scores exactly 1.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rasopt_speedup(
    original_seconds: f64,
    candidate_failed: bool,
    candidate_seconds: f64,
    out: *mut f64,
) -> RasoptStatus {
    if out.is_null() {
        return fail(RasoptStatus::NullPointer, "out pointer is NULL");
    }
    if !(original_seconds > 0.0 && original_seconds.is_finite()) {
        return fail(
            RasoptStatus::InvalidArgument,
            "original running time must be positive and finite",
        );
    }
    let original = Score::Finite {
        seconds: original_seconds,
    };
    let candidate = if candidate_failed {
        Score::NegInfinity {
            reason: FailReason::Timeout,
        }
    } else {
        if !(candidate_seconds > 0.0 && candidate_seconds.is_finite()) {
            return fail(
                RasoptStatus::InvalidArgument,
                "candidate running time must be positive and finite",
            );
        }
        Score::Finite {
            seconds: candidate_seconds,
        }
    };
    match rasopt::harness::speedup(&original, &candidate) {
        Ok(value) => {
            unsafe { *out = value };
            RasoptStatus::Ok
        }
        Err(e) => fail(RasoptStatus::InvalidArgument, e.to_string()),
    }
}

unsafe fn values_arg<'a>(values: *const f64, len: usize) -> Result<&'a [f64], RasoptStatus> {
    if values.is_null() {
        return Err(fail(RasoptStatus::NullPointer, "values pointer is NULL"));
    }
    if len == 0 {
        return Err(fail(RasoptStatus::InvalidArgument, "empty input"));
    }
    Ok(unsafe { std::slice::from_raw_parts(values, len) })
}

fn results_from(speedups: &[f64]) -> Vec<RunResult> {
    speedups
        .iter()
        .map(|s| RunResult {
            program_id: String::new(),
            baseline_time: 1.0,
            final_time: None,
            speedup: *s,
            optimized: false,
            trace_ref: String::new(),
        })
        .collect()
}

/// Arithmetic mean of the given speedups.
///
/// # Safety
/// `speedups` must point to `len` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rasopt_mean_best_speedup(
    speedups: *const f64,
    len: usize,
    out: *mut f64,
) -> RasoptStatus {
    if out.is_null() {
        return fail(RasoptStatus::NullPointer, "out pointer is NULL");
    }
    let values = match unsafe { values_arg(speedups, len) } {
        Ok(v) => v,
        Err(status) => return status,
    };
    match mean_best_speedup(&results_from(values)) {
        Ok(mean) => {
            unsafe { *out = mean };
            RasoptStatus::Ok
        }
        Err(e) => fail(RasoptStatus::InvalidArgument, e.to_string()),
    }
}

/// Fraction of speedups at or above `threshold` (which must exceed 1).
///
/// # Safety
/// `speedups` must point to `len` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rasopt_pct_optimized(
    speedups: *const f64,
    len: usize,
    threshold: f64,
    out: *mut f64,
) -> RasoptStatus {
    if out.is_null() {
        return fail(RasoptStatus::NullPointer, "out pointer is NULL");
    }
    let values = match unsafe { values_arg(speedups, len) } {
        Ok(v) => v,
        Err(status) => return status,
    };
    match pct_optimized(&results_from(values), threshold) {
        Ok(pct) => {
            unsafe { *out = pct };
            RasoptStatus::Ok
        }
        Err(e) => fail(RasoptStatus::InvalidArgument, e.to_string()),
    }
}

/// Pearson and Spearman correlation of two equal-length timing series.
///
/// # Safety
/// `full` and `subset` must each point to `len` doubles; the out-pointers
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn rasopt_timing_correlation(
    full: *const f64,
    subset: *const f64,
    len: usize,
    pearson_r: *mut f64,
    spearman_rho: *mut f64,
) -> RasoptStatus {
    if pearson_r.is_null() || spearman_rho.is_null() {
        return fail(RasoptStatus::NullPointer, "out pointer is NULL");
    }
    let full = match unsafe { values_arg(full, len) } {
        Ok(v) => v,
        Err(status) => return status,
    };
    let subset = match unsafe { values_arg(subset, len) } {
        Ok(v) => v,
        Err(status) => return status,
    };
    match timing_correlation(full, subset) {
        Ok(c) => {
            unsafe {
                *pearson_r = c.pearson_r;
                *spearman_rho = c.spearman_rho;
            }
            RasoptStatus::Ok
        }
        Err(e) => fail(RasoptStatus::InvalidArgument, e.to_string()),
    }
}

// ---------------------------------------------------------------------------
// Corpus handle
// ---------------------------------------------------------------------------

/// Opaque handle over a loaded pair corpus.
pub struct RasoptCorpus {
    pairs: Vec<ProgramPair>,
    rejects: usize,
}

/// Loads a line-delimited pair corpus.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable. The
/// returned handle must be freed with `rasopt_corpus_free`.
#[no_mangle]
pub unsafe extern "C" fn rasopt_corpus_load(
    path: *const c_char,
    out: *mut *mut RasoptCorpus,
) -> RasoptStatus {
    if out.is_null() {
        return fail(RasoptStatus::NullPointer, "out pointer is NULL");
    }
    let path = match unsafe { str_arg(path) } {
        Ok(s) => s,
        Err(status) => return status,
    };
    match catch_unwind(AssertUnwindSafe(|| {
        load_pairs(Path::new(path), PairFormat::Jsonl)
    })) {
        Ok(Ok(loaded)) => {
            let handle = Box::new(RasoptCorpus {
                pairs: loaded.pairs,
                rejects: loaded.rejects.len(),
            });
            unsafe { *out = Box::into_raw(handle) };
            RasoptStatus::Ok
        }
        Ok(Err(e)) => {
            let status = match &e {
                rasopt::corpus::CorpusError::Io { .. } => RasoptStatus::IoError,
                _ => RasoptStatus::ParseError,
            };
            fail(status, e.to_string())
        }
        Err(_) => fail(RasoptStatus::InternalError, "panic while loading corpus"),
    }
}

/// Number of valid pairs in the corpus; 0 for a NULL handle.
///
/// # Safety
/// `corpus` must be NULL or a live corpus handle.
#[no_mangle]
pub unsafe extern "C" fn rasopt_corpus_len(corpus: *const RasoptCorpus) -> usize {
    if corpus.is_null() {
        return 0;
    }
    unsafe { &*corpus }.pairs.len()
}

/// Number of rejected records observed while loading; 0 for a NULL handle.
///
/// # Safety
/// `corpus` must be NULL or a live corpus handle.
#[no_mangle]
pub unsafe extern "C" fn rasopt_corpus_reject_len(corpus: *const RasoptCorpus) -> usize {
    if corpus.is_null() {
        return 0;
    }
    unsafe { &*corpus }.rejects
}

/// Keeps, per problem, the `max_per_problem` pairs with the highest recorded
/// speedup; the result is a new handle.
///
/// # Safety
/// `corpus` must be a live corpus handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rasopt_corpus_select_high_quality(
    corpus: *const RasoptCorpus,
    max_per_problem: usize,
    out: *mut *mut RasoptCorpus,
) -> RasoptStatus {
    if corpus.is_null() || out.is_null() {
        return fail(RasoptStatus::NullPointer, "corpus or out pointer is NULL");
    }
    if max_per_problem == 0 {
        return fail(
            RasoptStatus::InvalidArgument,
            "max_per_problem must be positive",
        );
    }
    let corpus = unsafe { &*corpus };
    let selection = select_high_quality(&corpus.pairs, max_per_problem);
    let handle = Box::new(RasoptCorpus {
        pairs: selection.pairs,
        rejects: 0,
    });
    unsafe { *out = Box::into_raw(handle) };
    RasoptStatus::Ok
}

/// Frees a corpus handle.
///
/// # Safety
/// `corpus` must be a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rasopt_corpus_free(corpus: *mut RasoptCorpus) {
    if !corpus.is_null() {
        drop(unsafe { Box::from_raw(corpus) });
    }
}

// ---------------------------------------------------------------------------
// Index handle
// ---------------------------------------------------------------------------

/// Opaque handle over a persisted retrieval index of either payload kind.
pub struct RasoptIndex {
    index: AnyIndex,
}

/// Opaque handle over query results.
pub struct RasoptHits {
    keys: Vec<CString>,
    distances: Vec<f64>,
}

/// Opens a persisted index file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable. The
/// returned handle must be freed with `rasopt_index_free`.
#[no_mangle]
pub unsafe extern "C" fn rasopt_index_open(
    path: *const c_char,
    out: *mut *mut RasoptIndex,
) -> RasoptStatus {
    if out.is_null() {
        return fail(RasoptStatus::NullPointer, "out pointer is NULL");
    }
    let path = match unsafe { str_arg(path) } {
        Ok(s) => s,
        Err(status) => return status,
    };
    match catch_unwind(AssertUnwindSafe(|| AnyIndex::open(Path::new(path)))) {
        Ok(Ok(index)) => {
            unsafe { *out = Box::into_raw(Box::new(RasoptIndex { index })) };
            RasoptStatus::Ok
        }
        Ok(Err(e)) => {
            let status = match &e {
                rasopt::retrieval::RetrievalError::Io { .. } => RasoptStatus::IoError,
                _ => RasoptStatus::ParseError,
            };
            fail(status, e.to_string())
        }
        Err(_) => fail(RasoptStatus::InternalError, "panic while opening index"),
    }
}

/// Number of entries in the index; 0 for a NULL handle.
///
/// # Safety
/// `index` must be NULL or a live index handle.
#[no_mangle]
pub unsafe extern "C" fn rasopt_index_len(index: *const RasoptIndex) -> usize {
    if index.is_null() {
        return 0;
    }
    unsafe { &*index }.index.len()
}

/// Embedding dimension of the index; 0 for a NULL handle.
///
/// # Safety
/// `index` must be NULL or a live index handle.
#[no_mangle]
pub unsafe extern "C" fn rasopt_index_dim(index: *const RasoptIndex) -> usize {
    if index.is_null() {
        return 0;
    }
    unsafe { &*index }.index.dim()
}

/// Exact top-k query. `exclude_keys` may be NULL when `exclude_len` is 0.
///
/// # Safety
/// `query` must point to `dim` floats; `exclude_keys` must point to
/// `exclude_len` NUL-terminated strings; `out` must be writable. The
/// returned handle must be freed with `rasopt_hits_free`.
#[no_mangle]
pub unsafe extern "C" fn rasopt_index_query(
    index: *const RasoptIndex,
    query: *const f32,
    dim: usize,
    k: usize,
    exclude_keys: *const *const c_char,
    exclude_len: usize,
    out: *mut *mut RasoptHits,
) -> RasoptStatus {
    if index.is_null() || out.is_null() {
        return fail(RasoptStatus::NullPointer, "index or out pointer is NULL");
    }
    if query.is_null() {
        return fail(RasoptStatus::NullPointer, "query pointer is NULL");
    }
    if exclude_keys.is_null() && exclude_len > 0 {
        return fail(RasoptStatus::NullPointer, "exclude_keys pointer is NULL");
    }
    let index = unsafe { &*index };
    let query = unsafe { std::slice::from_raw_parts(query, dim) };
    let mut exclusions = BTreeSet::new();
    for i in 0..exclude_len {
        let key_ptr = unsafe { *exclude_keys.add(i) };
        match unsafe { str_arg(key_ptr) } {
            Ok(key) => {
                exclusions.insert(key.to_string());
            }
            Err(status) => return status,
        }
    }
    match index.index.query_keys(query, k, &exclusions) {
        Ok(hits) => {
            let mut keys = Vec::with_capacity(hits.len());
            let mut distances = Vec::with_capacity(hits.len());
            for (key, dist) in hits {
                keys.push(CString::new(key).unwrap_or_default());
                distances.push(dist);
            }
            unsafe { *out = Box::into_raw(Box::new(RasoptHits { keys, distances })) };
            RasoptStatus::Ok
        }
        Err(e) => fail(RasoptStatus::InvalidArgument, e.to_string()),
    }
}

/// Number of hits; 0 for a NULL handle.
///
/// # Safety
/// `hits` must be NULL or a live hits handle.
#[no_mangle]
pub unsafe extern "C" fn rasopt_hits_len(hits: *const RasoptHits) -> usize {
    if hits.is_null() {
        return 0;
    }
    unsafe { &*hits }.keys.len()
}

/// Borrowed key of hit `i`; NULL when out of range. Valid until the hits
/// handle is freed.
///
/// # Safety
/// `hits` must be NULL or a live hits handle.
#[no_mangle]
pub unsafe extern "C" fn rasopt_hits_key(hits: *const RasoptHits, i: usize) -> *const c_char {
    if hits.is_null() {
        return std::ptr::null();
    }
    let hits = unsafe { &*hits };
    match hits.keys.get(i) {
        Some(key) => key.as_ptr(),
        None => std::ptr::null(),
    }
}

/// Distance of hit `i`; NaN when out of range.
///
/// # Safety
/// `hits` must be NULL or a live hits handle.
#[no_mangle]
pub unsafe extern "C" fn rasopt_hits_distance(hits: *const RasoptHits, i: usize) -> f64 {
    if hits.is_null() {
        return f64::NAN;
    }
    let hits = unsafe { &*hits };
    hits.distances.get(i).copied().unwrap_or(f64::NAN)
}

/// Frees a hits handle.
///
/// # Safety
/// `hits` must be a handle from `rasopt_index_query`, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rasopt_hits_free(hits: *mut RasoptHits) {
    if !hits.is_null() {
        drop(unsafe { Box::from_raw(hits) });
    }
}

/// Frees an index handle.
///
/// # Safety
/// `index` must be a handle from `rasopt_index_open`, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rasopt_index_free(index: *mut RasoptIndex) {
    if !index.is_null() {
        drop(unsafe { Box::from_raw(index) });
    }
}
