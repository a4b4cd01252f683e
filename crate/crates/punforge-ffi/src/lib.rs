//! C ABI over punforge's deterministic kernel: canonicalization, control
//! signals, verdict parsing, success-profile arithmetic, and manifest
//! accuracy. Handles are opaque; every fallible call returns a status code
//! and the last error message is retrievable per thread.
//!
//! The generated header lands in `include/punforge.h` at build time.

use std::cell::RefCell;
use std::ffi::{c_char, c_double, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use punforge::dataset::load_manifest;
use punforge::engine::RunRecord;
use punforge::evalbench::{accuracy_with, round1, FailedRunPolicy};
use punforge::matcher::{canonicalize, exact_equivalent, parse_judge_verdict};
use punforge::model::next_control_signal;
use punforge::simzoo::{derive_run_seed, expected_accuracy, marginal_gain, sample_run, SuccessProfile};

/// Result of every fallible call in this ABI.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PunforgeStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    IoError = 4,
    ParseError = 5,
    InternalError = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let message = message.into();
    let cstring = CString::new(message.replace('\0', "?"))
        .unwrap_or_else(|_| CString::new("error").unwrap());
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(cstring));
}

fn clear_error() {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
}

fn fail(status: PunforgeStatus, message: impl Into<String>) -> PunforgeStatus {
    set_error(message);
    status
}

/// Last error message raised on this thread, or NULL. Caller frees with
/// `punforge_string_free`.
#[no_mangle]
pub extern "C" fn punforge_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|slot| match slot.borrow().as_ref() {
        Some(message) => message.clone().into_raw(),
        None => ptr::null_mut(),
    })
}

/// Frees a string returned by this library. NULL is accepted.
///
/// # Safety
/// `s` must be a pointer returned by this library, or NULL, and must not be
/// used afterwards.
#[no_mangle]
pub unsafe extern "C" fn punforge_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

unsafe fn read_str<'a>(ptr: *const c_char) -> Result<&'a str, PunforgeStatus> {
    if ptr.is_null() {
        return Err(PunforgeStatus::NullArgument);
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| PunforgeStatus::InvalidUtf8)
}

/// Canonical form of an idiom string (NFC, lowercased, punctuation stripped,
/// whitespace collapsed). Returns NULL on null/invalid input; the result may
/// be the empty string. Caller frees with `punforge_string_free`.
///
/// # Safety
/// `input` must be a valid NUL-terminated string or NULL.
#[no_mangle]
pub unsafe extern "C" fn punforge_canonicalize(input: *const c_char) -> *mut c_char {
    clear_error();
    match read_str(input) {
        Ok(text) => match CString::new(canonicalize(text)) {
            Ok(out) => out.into_raw(),
            Err(_) => {
                set_error("canonical form contained an interior NUL");
                ptr::null_mut()
            }
        },
        Err(status) => {
            set_error(format!("canonicalize: bad input ({status:?})"));
            ptr::null_mut()
        }
    }
}

/// 1 when both strings canonicalize to the same form, 0 when not,
/// -1 on null/invalid input.
///
/// # Safety
/// `a` and `b` must be valid NUL-terminated strings or NULL.
#[no_mangle]
pub unsafe extern "C" fn punforge_exact_equivalent(a: *const c_char, b: *const c_char) -> c_int {
    clear_error();
    match (read_str(a), read_str(b)) {
        (Ok(a), Ok(b)) => exact_equivalent(a, b) as c_int,
        _ => {
            set_error("exact_equivalent: bad input");
            -1
        }
    }
}

/// 1 = STOP, 0 = CONTINUE, -1 on invalid arguments (t or max_steps zero).
#[no_mangle]
pub extern "C" fn punforge_next_control_signal(matched: bool, t: u32, max_steps: u32) -> c_int {
    clear_error();
    if t == 0 || max_steps == 0 {
        set_error("next_control_signal: t and max_steps must be >= 1");
        return -1;
    }
    match next_control_signal(matched, t, max_steps) {
        punforge::model::ControlSignal::Stop => 1,
        punforge::model::ControlSignal::Continue => 0,
    }
}

/// Parses a judge reply into (matched, parse_ok), both written as 0/1.
///
/// # Safety
/// `raw` must be a valid NUL-terminated string or NULL; the out pointers
/// must be valid.
#[no_mangle]
pub unsafe extern "C" fn punforge_parse_judge_verdict(
    raw: *const c_char,
    out_matched: *mut c_int,
    out_parse_ok: *mut c_int,
) -> PunforgeStatus {
    clear_error();
    if out_matched.is_null() || out_parse_ok.is_null() {
        return fail(PunforgeStatus::NullArgument, "output pointers are NULL");
    }
    let raw = match read_str(raw) {
        Ok(raw) => raw,
        Err(status) => return fail(status, "parse_judge_verdict: bad input"),
    };
    let (matched, parse_ok) = parse_judge_verdict(raw);
    *out_matched = matched as c_int;
    *out_parse_ok = parse_ok as c_int;
    PunforgeStatus::Ok
}

/// Display rounding used by every report: one decimal, half away from zero.
#[no_mangle]
pub extern "C" fn punforge_round1(value: c_double) -> c_double {
    round1(value)
}

/// The per-run seed derivation: global seed mixed with idiom and salt.
///
/// # Safety
/// `idiom` and `salt` must be valid NUL-terminated strings or NULL; `out`
/// must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn punforge_run_seed(
    global_seed: u64,
    idiom: *const c_char,
    salt: *const c_char,
    out: *mut u64,
) -> PunforgeStatus {
    clear_error();
    if out.is_null() {
        return fail(PunforgeStatus::NullArgument, "out pointer is NULL");
    }
    match (read_str(idiom), read_str(salt)) {
        (Ok(idiom), Ok(salt)) => {
            *out = derive_run_seed(global_seed, idiom, salt);
            PunforgeStatus::Ok
        }
        _ => fail(PunforgeStatus::NullArgument, "run_seed: bad input"),
    }
}

/// Opaque handle over a per-round success profile.
pub struct PunforgeProfile {
    inner: SuccessProfile,
}

/// Builds a profile from `len` per-round probabilities in [0, 1].
///
/// # Safety
/// `per_round_p` must point at `len` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn punforge_profile_new(
    per_round_p: *const c_double,
    len: usize,
    out: *mut *mut PunforgeProfile,
) -> PunforgeStatus {
    clear_error();
    if per_round_p.is_null() || out.is_null() {
        return fail(PunforgeStatus::NullArgument, "profile_new: NULL input");
    }
    let slice = std::slice::from_raw_parts(per_round_p, len);
    match SuccessProfile::new("ffi profile", slice.to_vec()) {
        Ok(profile) => {
            *out = Box::into_raw(Box::new(PunforgeProfile { inner: profile }));
            PunforgeStatus::Ok
        }
        Err(err) => fail(PunforgeStatus::InvalidArgument, err.to_string()),
    }
}

/// Frees a profile handle. NULL is accepted.
///
/// # Safety
/// `profile` must be a pointer returned by `punforge_profile_new` or NULL.
#[no_mangle]
pub unsafe extern "C" fn punforge_profile_free(profile: *mut PunforgeProfile) {
    if !profile.is_null() {
        drop(Box::from_raw(profile));
    }
}

unsafe fn profile_ref<'a>(
    profile: *const PunforgeProfile,
) -> Result<&'a SuccessProfile, PunforgeStatus> {
    profile
        .as_ref()
        .map(|p| &p.inner)
        .ok_or(PunforgeStatus::NullArgument)
}

/// Cumulative match probability within `k` rounds.
///
/// # Safety
/// `profile` must be a live profile handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn punforge_profile_expected_accuracy(
    profile: *const PunforgeProfile,
    k: u32,
    out: *mut c_double,
) -> PunforgeStatus {
    clear_error();
    if out.is_null() {
        return fail(PunforgeStatus::NullArgument, "out pointer is NULL");
    }
    if k == 0 {
        return fail(PunforgeStatus::InvalidArgument, "k must be >= 1");
    }
    match profile_ref(profile) {
        Ok(inner) => {
            *out = expected_accuracy(inner, k);
            PunforgeStatus::Ok
        }
        Err(status) => fail(status, "profile handle is NULL"),
    }
}

/// Accuracy gained by round `k` over `k - 1` (requires `k >= 2`).
///
/// # Safety
/// `profile` must be a live profile handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn punforge_profile_marginal_gain(
    profile: *const PunforgeProfile,
    k: u32,
    out: *mut c_double,
) -> PunforgeStatus {
    clear_error();
    if out.is_null() {
        return fail(PunforgeStatus::NullArgument, "out pointer is NULL");
    }
    match profile_ref(profile) {
        Ok(inner) => match marginal_gain(inner, k) {
            Ok(gain) => {
                *out = gain;
                PunforgeStatus::Ok
            }
            Err(err) => fail(PunforgeStatus::InvalidArgument, err.to_string()),
        },
        Err(status) => fail(status, "profile handle is NULL"),
    }
}

/// Samples one run under a seeded generator; writes the 1-based matching
/// round, or 0 when the run never matches within `max_steps`.
///
/// # Safety
/// `profile` must be a live profile handle; `out_round` must be valid.
#[no_mangle]
pub unsafe extern "C" fn punforge_profile_sample_run(
    profile: *const PunforgeProfile,
    max_steps: u32,
    seed: u64,
    out_round: *mut u32,
) -> PunforgeStatus {
    clear_error();
    if out_round.is_null() {
        return fail(PunforgeStatus::NullArgument, "out pointer is NULL");
    }
    if max_steps == 0 {
        return fail(PunforgeStatus::InvalidArgument, "max_steps must be >= 1");
    }
    match profile_ref(profile) {
        Ok(inner) => {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            *out_round = sample_run(inner, max_steps, &mut rng).unwrap_or(0);
            PunforgeStatus::Ok
        }
        Err(status) => fail(status, "profile handle is NULL"),
    }
}

/// Opaque handle over a loaded run manifest.
pub struct PunforgeManifest {
    records: Vec<RunRecord>,
}

/// Loads a JSONL run manifest from disk.
///
/// # Safety
/// `path` must be a valid NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn punforge_manifest_load(
    path: *const c_char,
    out: *mut *mut PunforgeManifest,
) -> PunforgeStatus {
    clear_error();
    if out.is_null() {
        return fail(PunforgeStatus::NullArgument, "out pointer is NULL");
    }
    let path = match read_str(path) {
        Ok(path) => path.to_string(),
        Err(status) => return fail(status, "manifest_load: bad path"),
    };
    let loaded = catch_unwind(AssertUnwindSafe(|| load_manifest(&path)));
    match loaded {
        Ok(Ok(entries)) => {
            let records = entries.into_iter().map(|e| e.record).collect();
            *out = Box::into_raw(Box::new(PunforgeManifest { records }));
            PunforgeStatus::Ok
        }
        Ok(Err(err)) => {
            let status = match &err {
                punforge::dataset::DatasetError::Io { .. } => PunforgeStatus::IoError,
                _ => PunforgeStatus::ParseError,
            };
            fail(status, err.to_string())
        }
        Err(_) => fail(PunforgeStatus::InternalError, "manifest load panicked"),
    }
}

/// Frees a manifest handle. NULL is accepted.
///
/// # Safety
/// `manifest` must be a pointer returned by `punforge_manifest_load` or NULL.
#[no_mangle]
pub unsafe extern "C" fn punforge_manifest_free(manifest: *mut PunforgeManifest) {
    if !manifest.is_null() {
        drop(Box::from_raw(manifest));
    }
}

/// Number of run records in the manifest; 0 for NULL.
///
/// # Safety
/// `manifest` must be a live manifest handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn punforge_manifest_len(manifest: *const PunforgeManifest) -> usize {
    manifest.as_ref().map_or(0, |m| m.records.len())
}

/// Recognition accuracy (percent) over the manifest's records. Non-zero
/// `exclude_failed` drops provider-failed runs instead of counting them as
/// misses.
///
/// # Safety
/// `manifest` must be a live manifest handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn punforge_manifest_accuracy(
    manifest: *const PunforgeManifest,
    exclude_failed: c_int,
    out: *mut c_double,
) -> PunforgeStatus {
    clear_error();
    if out.is_null() {
        return fail(PunforgeStatus::NullArgument, "out pointer is NULL");
    }
    let Some(manifest) = manifest.as_ref() else {
        return fail(PunforgeStatus::NullArgument, "manifest handle is NULL");
    };
    let policy = if exclude_failed != 0 {
        FailedRunPolicy::Exclude
    } else {
        FailedRunPolicy::CountAsMiss
    };
    match accuracy_with(&manifest.records, policy) {
        Ok(accuracy) => {
            *out = accuracy;
            PunforgeStatus::Ok
        }
        Err(err) => fail(PunforgeStatus::InvalidArgument, err.to_string()),
    }
}
