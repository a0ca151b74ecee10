//! C interface to the verifier.
//!
//! Models, configurations and results are opaque handles created and freed
//! through this interface. Every fallible function returns a
//! [`TachornStatus`]; on failure a description is available from
//! [`tachorn_last_error`] on the same thread. Strings handed out by the
//! library are owned by the caller and released with
//! [`tachorn_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::time::Duration;

use tachorn::dsl::{parse_model, print_model};
use tachorn::encoder::{bip_to_barrier, encode};
use tachorn::horn::to_smtlib;
use tachorn::model::{validate_model, SystemModel};
use tachorn::oracle::{explore, Bounds, ExploreOutcome};
use tachorn::schema::{check, CheckConfig, CheckError, CheckOutcome, InvariantSchema, Verdict};
use tachorn::solver::{split_command, SolverError};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TachornStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    ParseError = 3,
    InvalidModel = 4,
    InvalidArgument = 5,
    EncodeError = 6,
    SolverNotFound = 7,
    SolverError = 8,
    OracleAborted = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TachornVerdict {
    Safe = 0,
    Unsafe = 1,
    Unknown = 2,
}

/// A parsed system model.
pub struct TachornModel {
    model: SystemModel,
}

/// Settings for [`tachorn_check`].
pub struct TachornConfig {
    cfg: CheckConfig,
}

/// Outcome of [`tachorn_check`].
pub struct TachornResult {
    outcome: CheckOutcome,
    reduced: SystemModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: TachornStatus, msg: impl Into<String>) -> TachornStatus {
    set_error(msg);
    status
}

/// Runs `f`, converting a panic into [`TachornStatus::Panic`].
fn guard(f: impl FnOnce() -> TachornStatus) -> TachornStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(TachornStatus::Panic, "internal error"),
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, TachornStatus> {
    if p.is_null() {
        return Err(fail(TachornStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(TachornStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn put_string(out: *mut *mut c_char, s: String) {
    let c = CString::new(s.replace('\0', " ")).expect("no interior nul");
    *out = c.into_raw();
}

/// Description of the last failure on this thread, or null. The pointer
/// stays valid until the next call into the library on this thread.
#[no_mangle]
pub extern "C" fn tachorn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn tachorn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by the library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed before.
#[no_mangle]
pub unsafe extern "C" fn tachorn_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses and validates a model.
///
/// # Safety
/// `text` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tachorn_model_parse(
    text: *const c_char,
    out: *mut *mut TachornModel,
) -> TachornStatus {
    guard(|| {
        if out.is_null() {
            return fail(TachornStatus::NullArgument, "out is null");
        }
        *out = ptr::null_mut();
        let text = match str_arg(text, "text") {
            Ok(t) => t,
            Err(s) => return s,
        };
        let model = match parse_model(text) {
            Ok(m) => m,
            Err(e) => return fail(TachornStatus::ParseError, e.to_string()),
        };
        let diags = validate_model(&model);
        if !diags.is_empty() {
            let msg: Vec<String> = diags.iter().map(|d| d.to_string()).collect();
            return fail(TachornStatus::InvalidModel, msg.join("; "));
        }
        *out = Box::into_raw(Box::new(TachornModel { model }));
        TachornStatus::Ok
    })
}

/// # Safety
/// `model` must come from [`tachorn_model_parse`] or be null.
#[no_mangle]
pub unsafe extern "C" fn tachorn_model_free(model: *mut TachornModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of process templates of the model.
///
/// # Safety
/// `model` must be a live model handle or null.
#[no_mangle]
pub unsafe extern "C" fn tachorn_model_template_count(model: *const TachornModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.templates.len())
}

/// Pretty-prints the model in the input language.
///
/// # Safety
/// `model` must be a live model handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tachorn_model_print(
    model: *const TachornModel,
    out: *mut *mut c_char,
) -> TachornStatus {
    guard(|| {
        let (Some(m), false) = (model.as_ref(), out.is_null()) else {
            return fail(TachornStatus::NullArgument, "model or out is null");
        };
        put_string(out, print_model(&m.model));
        TachornStatus::Ok
    })
}

/// Emits the SMT-LIB Horn clauses of the model for `schema`, e.g. `"(1,3)"`.
///
/// # Safety
/// `model` must be a live model handle, `schema` a nul-terminated string
/// and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tachorn_encode(
    model: *const TachornModel,
    schema: *const c_char,
    out: *mut *mut c_char,
) -> TachornStatus {
    guard(|| {
        let (Some(m), false) = (model.as_ref(), out.is_null()) else {
            return fail(TachornStatus::NullArgument, "model or out is null");
        };
        let schema = match str_arg(schema, "schema") {
            Ok(s) => s,
            Err(s) => return s,
        };
        let schema: InvariantSchema = match schema.parse() {
            Ok(s) => s,
            Err(e) => return fail(TachornStatus::InvalidArgument, format!("schema: {e}")),
        };
        let hs = match bip_to_barrier(&m.model)
            .and_then(|reduced| encode(&reduced, &schema, Default::default()))
        {
            Ok(h) => h,
            Err(e) => return fail(TachornStatus::EncodeError, e.to_string()),
        };
        put_string(out, to_smtlib(&hs));
        TachornStatus::Ok
    })
}

/// A configuration with default settings; the solver command comes from
/// the `TACHORN_SOLVER` environment variable when set.
#[no_mangle]
pub extern "C" fn tachorn_config_new() -> *mut TachornConfig {
    Box::into_raw(Box::new(TachornConfig { cfg: CheckConfig::default() }))
}

/// # Safety
/// `cfg` must come from [`tachorn_config_new`] or be null.
#[no_mangle]
pub unsafe extern "C" fn tachorn_config_free(cfg: *mut TachornConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Sets the solver command line; `{file}` stands for the script path.
///
/// # Safety
/// `cfg` must be a live configuration and `command` a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn tachorn_config_set_solver(
    cfg: *mut TachornConfig,
    command: *const c_char,
) -> TachornStatus {
    guard(|| {
        let Some(c) = cfg.as_mut() else {
            return fail(TachornStatus::NullArgument, "cfg is null");
        };
        let cmd = match str_arg(command, "command") {
            Ok(s) => split_command(s),
            Err(s) => return s,
        };
        if cmd.is_empty() {
            return fail(TachornStatus::InvalidArgument, "empty solver command");
        }
        c.cfg.solver.command = cmd;
        TachornStatus::Ok
    })
}

/// Sets the per-query solver timeout.
///
/// # Safety
/// `cfg` must be a live configuration.
#[no_mangle]
pub unsafe extern "C" fn tachorn_config_set_timeout_ms(
    cfg: *mut TachornConfig,
    millis: u64,
) -> TachornStatus {
    guard(|| {
        let Some(c) = cfg.as_mut() else {
            return fail(TachornStatus::NullArgument, "cfg is null");
        };
        if millis == 0 {
            return fail(TachornStatus::InvalidArgument, "timeout must be positive");
        }
        c.cfg.solver.timeout = Duration::from_millis(millis);
        TachornStatus::Ok
    })
}

/// Sets the largest vector sum the refinement may reach.
///
/// # Safety
/// `cfg` must be a live configuration.
#[no_mangle]
pub unsafe extern "C" fn tachorn_config_set_cap(cfg: *mut TachornConfig, cap: usize) -> TachornStatus {
    guard(|| {
        let Some(c) = cfg.as_mut() else {
            return fail(TachornStatus::NullArgument, "cfg is null");
        };
        if cap == 0 {
            return fail(TachornStatus::InvalidArgument, "cap must be positive");
        }
        c.cfg.cap = cap;
        TachornStatus::Ok
    })
}

/// Runs the refinement loop. `cfg` may be null for defaults.
///
/// # Safety
/// `model` must be a live model handle, `cfg` a live configuration or null
/// and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tachorn_check(
    model: *const TachornModel,
    cfg: *const TachornConfig,
    out: *mut *mut TachornResult,
) -> TachornStatus {
    guard(|| {
        let (Some(m), false) = (model.as_ref(), out.is_null()) else {
            return fail(TachornStatus::NullArgument, "model or out is null");
        };
        *out = ptr::null_mut();
        let default_cfg;
        let cfg = match cfg.as_ref() {
            Some(c) => &c.cfg,
            None => {
                default_cfg = CheckConfig::default();
                &default_cfg
            }
        };
        let reduced = match bip_to_barrier(&m.model) {
            Ok(r) => r,
            Err(e) => return fail(TachornStatus::EncodeError, e.to_string()),
        };
        match check(&m.model, cfg) {
            Ok(outcome) => {
                *out = Box::into_raw(Box::new(TachornResult { outcome, reduced }));
                TachornStatus::Ok
            }
            Err(e) => {
                let status = match &e {
                    CheckError::InvalidModel(_) => TachornStatus::InvalidModel,
                    CheckError::Encode(_) => TachornStatus::EncodeError,
                    CheckError::Solver(SolverError::SolverNotFound(_)) => TachornStatus::SolverNotFound,
                    CheckError::Solver(_) => TachornStatus::SolverError,
                };
                fail(status, e.to_string())
            }
        }
    })
}

/// # Safety
/// `result` must come from [`tachorn_check`] or be null.
#[no_mangle]
pub unsafe extern "C" fn tachorn_result_free(result: *mut TachornResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// Verdict of a finished check; `Unknown` for a null handle.
///
/// # Safety
/// `result` must be a live result handle or null.
#[no_mangle]
pub unsafe extern "C" fn tachorn_result_verdict(result: *const TachornResult) -> TachornVerdict {
    match result.as_ref().map(|r| &r.outcome.verdict) {
        Some(Verdict::Safe { .. }) => TachornVerdict::Safe,
        Some(Verdict::Unsafe { .. }) => TachornVerdict::Unsafe,
        _ => TachornVerdict::Unknown,
    }
}

/// The schema of the final attempt, e.g. `"(1,3)"`.
///
/// # Safety
/// `result` must be a live result handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tachorn_result_schema(
    result: *const TachornResult,
    out: *mut *mut c_char,
) -> TachornStatus {
    guard(|| {
        let (Some(r), false) = (result.as_ref(), out.is_null()) else {
            return fail(TachornStatus::NullArgument, "result or out is null");
        };
        put_string(out, r.outcome.verdict.schema().to_string());
        TachornStatus::Ok
    })
}

/// The verdict and attempt history as JSON.
///
/// # Safety
/// `result` must be a live result handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tachorn_result_json(
    result: *const TachornResult,
    out: *mut *mut c_char,
) -> TachornStatus {
    guard(|| {
        let (Some(r), false) = (result.as_ref(), out.is_null()) else {
            return fail(TachornStatus::NullArgument, "result or out is null");
        };
        match serde_json::to_string(&r.outcome) {
            Ok(s) => {
                put_string(out, s);
                TachornStatus::Ok
            }
            Err(e) => fail(TachornStatus::Panic, e.to_string()),
        }
    })
}

/// The error trace of an unsafe verdict in the line format; `*out` is set
/// to null for other verdicts.
///
/// # Safety
/// `result` must be a live result handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tachorn_result_trace(
    result: *const TachornResult,
    out: *mut *mut c_char,
) -> TachornStatus {
    guard(|| {
        let (Some(r), false) = (result.as_ref(), out.is_null()) else {
            return fail(TachornStatus::NullArgument, "result or out is null");
        };
        *out = ptr::null_mut();
        if let Verdict::Unsafe { trace, .. } = &r.outcome.verdict {
            put_string(out, trace.to_text(&r.reduced));
        }
        TachornStatus::Ok
    })
}

/// Searches the instantiation with `counts[i]` instances of template `i`
/// for an error trace of at most `depth` steps. `*reachable` is set to 1
/// when one is found, and `trace_out`, when not null, receives it (or null).
///
/// # Safety
/// `counts` must point to `n_counts` values, `reachable` must be valid and
/// `trace_out` valid or null.
#[no_mangle]
pub unsafe extern "C" fn tachorn_oracle(
    model: *const TachornModel,
    counts: *const usize,
    n_counts: usize,
    depth: usize,
    reachable: *mut i32,
    trace_out: *mut *mut c_char,
) -> TachornStatus {
    guard(|| {
        let Some(m) = model.as_ref() else {
            return fail(TachornStatus::NullArgument, "model is null");
        };
        if reachable.is_null() || (counts.is_null() && n_counts > 0) {
            return fail(TachornStatus::NullArgument, "counts or reachable is null");
        }
        let counts = if n_counts == 0 { &[][..] } else { std::slice::from_raw_parts(counts, n_counts) };
        if !trace_out.is_null() {
            *trace_out = ptr::null_mut();
        }
        let reduced = match bip_to_barrier(&m.model) {
            Ok(r) => r,
            Err(e) => return fail(TachornStatus::EncodeError, e.to_string()),
        };
        let bounds = Bounds { depth, ..Bounds::default() };
        match explore(&reduced, counts, bounds) {
            Ok(ExploreOutcome::Reachable { trace, .. }) => {
                *reachable = 1;
                if !trace_out.is_null() {
                    put_string(trace_out, trace.to_text(&reduced));
                }
                TachornStatus::Ok
            }
            Ok(ExploreOutcome::UnreachableWithinBounds { .. }) => {
                *reachable = 0;
                TachornStatus::Ok
            }
            Err(e @ tachorn::oracle::OracleError::InvalidCounts { .. }) => {
                fail(TachornStatus::InvalidArgument, e.to_string())
            }
            Err(e) => fail(TachornStatus::OracleAborted, e.to_string()),
        }
    })
}
