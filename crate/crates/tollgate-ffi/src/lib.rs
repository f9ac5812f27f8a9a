//! C ABI over the tollgate routing engine: build an engine from artifact
//! files once, then route prompts and receive the same wire JSON the CLI
//! and the HTTP service emit.
//!
//! Handles are opaque. Every fallible call returns a `TollgateStatus`;
//! the message for the most recent failure on the current thread stays
//! readable through `tollgate_last_error_message` until the next call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::ptr;

use tollgate::cli::AppConfig;
use tollgate::encoder::{Encoder, EncoderSpec};
use tollgate::estimator::load_params;
use tollgate::service::{decide, RouteRequest, ServiceState, VersionDoc, WIRE_SCHEMA_VERSION};
use tollgate::{Error, Registry};

/// Status code returned by every fallible call in this ABI.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TollgateStatus {
    /// The call succeeded.
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// An argument was understood but its value is out of range.
    InvalidArgument = 3,
    /// A named candidate, family, or prompt id is not known.
    NotFound = 4,
    /// A file operation failed; the message carries the OS error.
    Io = 5,
    /// An artifact file exists but cannot be decoded.
    BadArtifact = 6,
    /// Unexpected internal failure.
    Internal = 7,
}

/// A loaded routing engine: registry, estimator, encoder, and router
/// settings. Create with `tollgate_engine_new`, share freely across
/// threads for reads, free with `tollgate_engine_free`.
pub struct TollgateEngine {
    state: ServiceState,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn fail(status: TollgateStatus, message: String) -> TollgateStatus {
    // Interior NULs would make CString::new fail; blank them instead.
    let message = message.replace('\0', " ");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = CString::new(message).ok());
    status
}

fn succeed() -> TollgateStatus {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
    TollgateStatus::Ok
}

fn guarded(body: impl FnOnce() -> TollgateStatus) -> TollgateStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => fail(
            TollgateStatus::Internal,
            "panic across the C boundary".into(),
        ),
    }
}

fn status_of(err: &Error) -> TollgateStatus {
    match err {
        Error::InvalidTolerance(_)
        | Error::EmptyInput(_)
        | Error::EmptyCandidateSet
        | Error::MissingStaticStat { .. }
        | Error::InvalidStaticStats
        | Error::Config(_) => TollgateStatus::InvalidArgument,
        Error::UnknownCandidate(_) | Error::UnknownFamily(_) | Error::UnknownPromptId(_) => {
            TollgateStatus::NotFound
        }
        Error::Io(_) => TollgateStatus::Io,
        Error::Json(_)
        | Error::TomlParse(_)
        | Error::ParamsVersion { .. }
        | Error::ParamsCorrupt(_)
        | Error::DimensionMismatch { .. } => TollgateStatus::BadArtifact,
        Error::Prompt { source, .. } => status_of(source),
        _ => TollgateStatus::Internal,
    }
}

macro_rules! ffi_try {
    ($expr:expr) => {
        match $expr {
            Ok(value) => value,
            Err(status) => return status,
        }
    };
}

/// Borrow a required C string argument.
///
/// # Safety
/// `ptr` must be null or point to a NUL-terminated string.
unsafe fn required_str<'a>(
    ptr: *const c_char,
    name: &str,
) -> Result<&'a str, TollgateStatus> {
    if ptr.is_null() {
        return Err(fail(TollgateStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        fail(
            TollgateStatus::InvalidUtf8,
            format!("{name} is not valid UTF-8"),
        )
    })
}

unsafe fn optional_path(
    ptr: *const c_char,
    name: &str,
) -> Result<Option<PathBuf>, TollgateStatus> {
    if ptr.is_null() {
        return Ok(None);
    }
    required_str(ptr, name).map(|s| Some(PathBuf::from(s)))
}

unsafe fn required_engine<'a>(
    ptr: *const TollgateEngine,
) -> Result<&'a TollgateEngine, TollgateStatus> {
    ptr.as_ref()
        .ok_or_else(|| fail(TollgateStatus::NullPointer, "engine is null".into()))
}

fn build_engine(
    params_path: &Path,
    registry_path: Option<&Path>,
    config_path: Option<&Path>,
) -> tollgate::Result<TollgateEngine> {
    let config = AppConfig::load(config_path)?;
    let registry = match registry_path {
        Some(p) => Registry::from_path(p)?,
        None => Registry::bundled(),
    };
    let params = load_params(params_path, &registry)?;
    let encoder = Encoder::from_spec(&EncoderSpec::hashed(params.d))?;
    params.check_encoder(&encoder)?;
    config.router.validate()?;
    Ok(TollgateEngine {
        state: ServiceState {
            params,
            encoder,
            registry,
            router: config.router,
        },
    })
}

unsafe fn write_string(s: String, out: *mut *mut c_char) -> TollgateStatus {
    match CString::new(s) {
        Ok(s) => {
            *out = s.into_raw();
            succeed()
        }
        Err(_) => fail(
            TollgateStatus::Internal,
            "response contained a NUL byte".into(),
        ),
    }
}

fn respond(
    engine: &TollgateEngine,
    request: &RouteRequest,
    out_response: *mut *mut c_char,
) -> TollgateStatus {
    match decide(&engine.state, request) {
        Ok(response) => match serde_json::to_string(&response) {
            Ok(json) => unsafe { write_string(json, out_response) },
            Err(e) => fail(TollgateStatus::Internal, e.to_string()),
        },
        Err(e) => fail(status_of(&e), e.to_string()),
    }
}

/// Library version as a static NUL-terminated string. Do not free.
#[no_mangle]
pub extern "C" fn tollgate_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message for the most recent failure on this thread, or null after a
/// success. Valid until the next tollgate call from the same thread; do
/// not free.
#[no_mangle]
pub extern "C" fn tollgate_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Build an engine from a parameter artifact. `registry_path` and
/// `config_path` may be null to use the bundled registry and default
/// settings; a config file uses the same TOML schema as the CLI. On
/// success `*out_engine` owns the engine.
///
/// # Safety
/// Path arguments must be null or NUL-terminated strings; `out_engine`
/// must point to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn tollgate_engine_new(
    params_path: *const c_char,
    registry_path: *const c_char,
    config_path: *const c_char,
    out_engine: *mut *mut TollgateEngine,
) -> TollgateStatus {
    guarded(|| {
        if out_engine.is_null() {
            return fail(TollgateStatus::NullPointer, "out_engine is null".into());
        }
        let params = ffi_try!(required_str(params_path, "params_path"));
        let registry = ffi_try!(optional_path(registry_path, "registry_path"));
        let config = ffi_try!(optional_path(config_path, "config_path"));
        match build_engine(Path::new(params), registry.as_deref(), config.as_deref()) {
            Ok(engine) => {
                *out_engine = Box::into_raw(Box::new(engine));
                succeed()
            }
            Err(e) => fail(status_of(&e), e.to_string()),
        }
    })
}

/// Free an engine returned by `tollgate_engine_new`. Null is ignored.
///
/// # Safety
/// `engine` must be null or a pointer this library returned, freed once.
#[no_mangle]
pub unsafe extern "C" fn tollgate_engine_free(engine: *mut TollgateEngine) {
    let _ = catch_unwind(AssertUnwindSafe(|| {
        if !engine.is_null() {
            drop(Box::from_raw(engine));
        }
    }));
}

/// Route one prompt against the whole loaded family. Tolerance 0 asks
/// for maximum quality; 1 for minimum cost. On success `*out_response`
/// is the NUL-terminated wire response JSON; free it with
/// `tollgate_string_free`.
///
/// # Safety
/// `engine` must be a live engine, `prompt` a NUL-terminated string,
/// and `out_response` writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn tollgate_route(
    engine: *const TollgateEngine,
    prompt: *const c_char,
    tolerance: f64,
    out_response: *mut *mut c_char,
) -> TollgateStatus {
    guarded(|| {
        let engine = ffi_try!(required_engine(engine));
        if out_response.is_null() {
            return fail(TollgateStatus::NullPointer, "out_response is null".into());
        }
        let prompt = ffi_try!(required_str(prompt, "prompt"));
        let request = RouteRequest {
            prompt: prompt.to_owned(),
            tolerance: Some(tolerance),
            family: None,
            candidates: None,
            prompt_id: None,
            request_id: None,
        };
        respond(engine, &request, out_response)
    })
}

/// Route one request given as wire JSON, the same document POST /route
/// accepts (prompt, tolerance, candidates, prompt_id, request_id). On
/// success `*out_response` is the wire response JSON; free it with
/// `tollgate_string_free`.
///
/// # Safety
/// Same contract as `tollgate_route`, with `request_json` as the
/// NUL-terminated string argument.
#[no_mangle]
pub unsafe extern "C" fn tollgate_route_json(
    engine: *const TollgateEngine,
    request_json: *const c_char,
    out_response: *mut *mut c_char,
) -> TollgateStatus {
    guarded(|| {
        let engine = ffi_try!(required_engine(engine));
        if out_response.is_null() {
            return fail(TollgateStatus::NullPointer, "out_response is null".into());
        }
        let body = ffi_try!(required_str(request_json, "request_json"));
        let request: RouteRequest = match serde_json::from_str(body) {
            Ok(request) => request,
            Err(e) => {
                return fail(
                    TollgateStatus::InvalidArgument,
                    format!("invalid request body: {e}"),
                )
            }
        };
        respond(engine, &request, out_response)
    })
}

/// Engine metadata as JSON (family, artifact versions, encoder id), the
/// same document GET /version serves. Free with `tollgate_string_free`.
///
/// # Safety
/// `engine` must be a live engine and `out_info` writable storage for
/// one pointer.
#[no_mangle]
pub unsafe extern "C" fn tollgate_engine_info(
    engine: *const TollgateEngine,
    out_info: *mut *mut c_char,
) -> TollgateStatus {
    guarded(|| {
        let engine = ffi_try!(required_engine(engine));
        if out_info.is_null() {
            return fail(TollgateStatus::NullPointer, "out_info is null".into());
        }
        let state = &engine.state;
        let doc = VersionDoc {
            schema_version: WIRE_SCHEMA_VERSION,
            service: env!("CARGO_PKG_VERSION").into(),
            family: state.params.family.clone(),
            estimator_version: state.params.version.clone(),
            registry_version: state.registry.version(),
            encoder_id: state.encoder.id(),
        };
        match serde_json::to_string(&doc) {
            Ok(json) => write_string(json, out_info),
            Err(e) => fail(TollgateStatus::Internal, e.to_string()),
        }
    })
}

/// Free a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must be null or a string this library returned, freed once.
#[no_mangle]
pub unsafe extern "C" fn tollgate_string_free(s: *mut c_char) {
    let _ = catch_unwind(AssertUnwindSafe(|| {
        if !s.is_null() {
            drop(CString::from_raw(s));
        }
    }));
}
