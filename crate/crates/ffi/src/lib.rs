//! C ABI for the grading core: rule-based grading, exact answer
//! equivalence, text canonicalization, and knowledge-tracing updates.
//!
//! All functions are thread-safe. Strings are NUL-terminated UTF-8;
//! strings returned by this library must be released with
//! [`ammore_string_free`]. Every fallible call returns an
//! [`AmmoreStatus`] and writes its result through an out pointer.

use ammore::bkt::{bkt_step, bkt_trace, default_params, BktParams};
use ammore::normalizer::{
    canonicalize_text_with, equivalent, naive_match, parse_math, text_process_grade_with,
    TextRules,
};
use std::ffi::{c_char, c_double, c_int, CStr, CString};

/// Result code of every fallible FFI call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AmmoreStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
}

/// Opaque grader handle holding the text-normalization rules.
pub struct AmmoreGrader {
    rules: TextRules,
}

/// Knowledge-tracing parameters: initial knowledge, learn, slip, guess.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct AmmoreBktParams {
    pub p_init: c_double,
    pub p_learn: c_double,
    pub p_slip: c_double,
    pub p_guess: c_double,
}

impl AmmoreBktParams {
    fn to_params(self) -> Option<BktParams> {
        BktParams::new_unguarded(self.p_init, self.p_learn, self.p_slip, self.p_guess).ok()
    }
}

unsafe fn read_str<'a>(ptr: *const c_char) -> Result<&'a str, AmmoreStatus> {
    if ptr.is_null() {
        return Err(AmmoreStatus::NullArgument);
    }
    unsafe { CStr::from_ptr(ptr) }
        .to_str()
        .map_err(|_| AmmoreStatus::InvalidUtf8)
}

/// Create a grader with the default normalization rules. Release with
/// [`ammore_grader_free`].
#[no_mangle]
pub extern "C" fn ammore_grader_new() -> *mut AmmoreGrader {
    Box::into_raw(Box::new(AmmoreGrader {
        rules: TextRules::default(),
    }))
}

/// # Safety
/// `grader` must be a pointer from [`ammore_grader_new`] that has not
/// been freed, or null (a no-op).
#[no_mangle]
pub unsafe extern "C" fn ammore_grader_free(grader: *mut AmmoreGrader) {
    if !grader.is_null() {
        drop(unsafe { Box::from_raw(grader) });
    }
}

/// Naive grading: trimmed, case-folded equality. Writes 1 into
/// `out_is_correct` for a correct answer, 0 otherwise.
///
/// # Safety
/// `grader` must be a live grader handle; string pointers must be
/// NUL-terminated; `out_is_correct` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ammore_grade_naive(
    grader: *const AmmoreGrader,
    expected: *const c_char,
    student: *const c_char,
    out_is_correct: *mut c_int,
) -> AmmoreStatus {
    if grader.is_null() || out_is_correct.is_null() {
        return AmmoreStatus::NullArgument;
    }
    let (expected, student) = match (unsafe { read_str(expected) }, unsafe { read_str(student) }) {
        (Ok(e), Ok(s)) => (e, s),
        (Err(status), _) | (_, Err(status)) => return status,
    };
    let verdict = naive_match(expected, student);
    unsafe { *out_is_correct = verdict.label.is_correct() as c_int };
    AmmoreStatus::Ok
}

/// Text-processing grading: canonicalization plus exact symbolic
/// equivalence, falling back from naive matching.
///
/// # Safety
/// As [`ammore_grade_naive`].
#[no_mangle]
pub unsafe extern "C" fn ammore_grade_text(
    grader: *const AmmoreGrader,
    question: *const c_char,
    expected: *const c_char,
    student: *const c_char,
    out_is_correct: *mut c_int,
) -> AmmoreStatus {
    if grader.is_null() || out_is_correct.is_null() {
        return AmmoreStatus::NullArgument;
    }
    let rules = unsafe { &(*grader).rules };
    let question = match unsafe { read_str(question) } {
        Ok(q) => q,
        Err(status) => return status,
    };
    let (expected, student) = match (unsafe { read_str(expected) }, unsafe { read_str(student) }) {
        (Ok(e), Ok(s)) => (e, s),
        (Err(status), _) | (_, Err(status)) => return status,
    };
    let verdict = text_process_grade_with(rules, question, expected, student);
    unsafe { *out_is_correct = verdict.label.is_correct() as c_int };
    AmmoreStatus::Ok
}

/// Exact mathematical equivalence of two answers after normalization
/// and parsing.
///
/// # Safety
/// As [`ammore_grade_naive`].
#[no_mangle]
pub unsafe extern "C" fn ammore_answers_equivalent(
    grader: *const AmmoreGrader,
    a: *const c_char,
    b: *const c_char,
    out_equivalent: *mut c_int,
) -> AmmoreStatus {
    if grader.is_null() || out_equivalent.is_null() {
        return AmmoreStatus::NullArgument;
    }
    let rules = unsafe { &(*grader).rules };
    let (a, b) = match (unsafe { read_str(a) }, unsafe { read_str(b) }) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(status), _) | (_, Err(status)) => return status,
    };
    let left = parse_math(&canonicalize_text_with(rules, a));
    let right = parse_math(&canonicalize_text_with(rules, b));
    unsafe { *out_equivalent = equivalent(&left, &right) as c_int };
    AmmoreStatus::Ok
}

/// Canonicalize raw answer text. On success `*out_text` holds a newly
/// allocated string; release it with [`ammore_string_free`].
///
/// # Safety
/// As [`ammore_grade_naive`]; `out_text` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ammore_canonicalize(
    grader: *const AmmoreGrader,
    raw: *const c_char,
    out_text: *mut *mut c_char,
) -> AmmoreStatus {
    if grader.is_null() || out_text.is_null() {
        return AmmoreStatus::NullArgument;
    }
    let rules = unsafe { &(*grader).rules };
    let raw = match unsafe { read_str(raw) } {
        Ok(r) => r,
        Err(status) => return status,
    };
    let canonical = canonicalize_text_with(rules, raw);
    match CString::new(canonical) {
        Ok(text) => {
            unsafe { *out_text = text.into_raw() };
            AmmoreStatus::Ok
        }
        Err(_) => AmmoreStatus::InvalidArgument,
    }
}

/// Release a string returned by this library. Null is a no-op.
///
/// # Safety
/// `text` must come from this library and must not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn ammore_string_free(text: *mut c_char) {
    if !text.is_null() {
        drop(unsafe { CString::from_raw(text) });
    }
}

/// The default knowledge-tracing parameters.
#[no_mangle]
pub extern "C" fn ammore_bkt_default_params() -> AmmoreBktParams {
    let p = default_params();
    AmmoreBktParams {
        p_init: p.p_init,
        p_learn: p.p_learn,
        p_slip: p.p_slip,
        p_guess: p.p_guess,
    }
}

/// One knowledge update from `p_know` given a correct (nonzero) or
/// incorrect (zero) observation. Parameters and `p_know` must lie
/// strictly inside (0,1).
///
/// # Safety
/// `out_p` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ammore_bkt_step(
    params: AmmoreBktParams,
    p_know: c_double,
    observed_correct: c_int,
    out_p: *mut c_double,
) -> AmmoreStatus {
    if out_p.is_null() {
        return AmmoreStatus::NullArgument;
    }
    let params = match params.to_params() {
        Some(p) => p,
        None => return AmmoreStatus::InvalidArgument,
    };
    if !(p_know > 0.0 && p_know < 1.0) {
        return AmmoreStatus::InvalidArgument;
    }
    unsafe { *out_p = bkt_step(p_know, observed_correct != 0, &params) };
    AmmoreStatus::Ok
}

/// Final knowledge probability after folding a whole observation
/// sequence (nonzero entries are correct answers) from the initial
/// probability in `params`. Empty sequences are invalid.
///
/// # Safety
/// `observations` must point at `len` readable ints; `out_final` must
/// be writable.
#[no_mangle]
pub unsafe extern "C" fn ammore_bkt_final_score(
    params: AmmoreBktParams,
    observations: *const c_int,
    len: usize,
    out_final: *mut c_double,
) -> AmmoreStatus {
    if observations.is_null() || out_final.is_null() {
        return AmmoreStatus::NullArgument;
    }
    let params = match params.to_params() {
        Some(p) => p,
        None => return AmmoreStatus::InvalidArgument,
    };
    let observations: Vec<bool> = unsafe { std::slice::from_raw_parts(observations, len) }
        .iter()
        .map(|&o| o != 0)
        .collect();
    match bkt_trace(&observations, &params) {
        Some(probabilities) => {
            unsafe { *out_final = *probabilities.last().expect("non-empty trace") };
            AmmoreStatus::Ok
        }
        None => AmmoreStatus::InvalidArgument,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ffi::CString;

    fn c(text: &str) -> CString {
        CString::new(text).unwrap()
    }

    #[test]
    fn grading_through_the_c_abi() {
        let grader = ammore_grader_new();
        let mut out: c_int = -1;

        let status = unsafe {
            ammore_grade_naive(grader, c("2").as_ptr(), c("2").as_ptr(), &mut out)
        };
        assert_eq!(status, AmmoreStatus::Ok);
        assert_eq!(out, 1);

        let status = unsafe {
            ammore_grade_text(
                grader,
                c("3^2 + 3^1 = __").as_ptr(),
                c("12").as_ptr(),
                c("=6+6 =12").as_ptr(),
                &mut out,
            )
        };
        assert_eq!(status, AmmoreStatus::Ok);
        assert_eq!(out, 1);

        let status = unsafe {
            ammore_answers_equivalent(grader, c("0.5").as_ptr(), c("1/2").as_ptr(), &mut out)
        };
        assert_eq!(status, AmmoreStatus::Ok);
        assert_eq!(out, 1);

        unsafe { ammore_grader_free(grader) };
    }

    #[test]
    fn canonicalize_round_trip() {
        let grader = ammore_grader_new();
        let mut text: *mut c_char = std::ptr::null_mut();
        let status =
            unsafe { ammore_canonicalize(grader, c("  is 2. ").as_ptr(), &mut text) };
        assert_eq!(status, AmmoreStatus::Ok);
        let canonical = unsafe { CStr::from_ptr(text) }.to_str().unwrap().to_string();
        assert_eq!(canonical, "2");
        unsafe { ammore_string_free(text) };
        unsafe { ammore_grader_free(grader) };
    }

    #[test]
    fn null_and_invalid_arguments() {
        let grader = ammore_grader_new();
        let mut out: c_int = 0;
        let status = unsafe {
            ammore_grade_naive(std::ptr::null(), c("2").as_ptr(), c("2").as_ptr(), &mut out)
        };
        assert_eq!(status, AmmoreStatus::NullArgument);
        let status = unsafe {
            ammore_grade_naive(grader, std::ptr::null(), c("2").as_ptr(), &mut out)
        };
        assert_eq!(status, AmmoreStatus::NullArgument);
        unsafe { ammore_grader_free(grader) };
    }

    #[test]
    fn bkt_through_the_c_abi() {
        let params = ammore_bkt_default_params();
        assert_eq!(params.p_init, 0.4);

        let mut p: c_double = 0.0;
        let status = unsafe { ammore_bkt_step(params, 0.4, 1, &mut p) };
        assert_eq!(status, AmmoreStatus::Ok);
        assert!((p - 0.629_338_842_9).abs() < 1e-9);

        let observations: [c_int; 3] = [1, 0, 1];
        let mut final_score: c_double = 0.0;
        let status = unsafe {
            ammore_bkt_final_score(params, observations.as_ptr(), 3, &mut final_score)
        };
        assert_eq!(status, AmmoreStatus::Ok);
        assert!(final_score > 0.0 && final_score < 1.0);

        // Empty sequences and out-of-range parameters are refused.
        let status = unsafe {
            ammore_bkt_final_score(params, observations.as_ptr(), 0, &mut final_score)
        };
        assert_eq!(status, AmmoreStatus::InvalidArgument);
        let bad = AmmoreBktParams {
            p_init: 1.5,
            ..params
        };
        let status = unsafe { ammore_bkt_step(bad, 0.4, 1, &mut p) };
        assert_eq!(status, AmmoreStatus::InvalidArgument);
    }
}
