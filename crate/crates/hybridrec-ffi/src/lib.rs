//! C ABI over the hybridrec pipeline.
//!
//! Pipeline steps operate on a run directory, mirroring the CLI subcommands;
//! recommendation queries go through an opaque [`HrRecommender`] handle.
//! Every call returns an [`HrStatus`]; on failure the thread-local message is
//! retrievable with [`hr_last_error`]. Strings returned by this library are
//! released with [`hr_string_free`].

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::os::raw::c_char;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use hybridrec::cli::{self, CliError, RunConfig};
use hybridrec::hybridnet::{self, persist, HybridNet, VisitorContext};

/// Result codes; nonzero means failure. The numeric values match the CLI
/// exit-code contract (2 config, 3 empty data, 4 missing artifact).
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HrStatus {
    HrOk = 0,
    HrInternal = 1,
    HrConfig = 2,
    HrEmptyData = 3,
    HrMissingArtifact = 4,
    HrNullPointer = 5,
    HrInvalidUtf8 = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: &str) {
    let cstring = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(cstring));
}

fn status_of(err: &CliError) -> HrStatus {
    match err {
        CliError::Config(_) => HrStatus::HrConfig,
        CliError::EmptyData(_) => HrStatus::HrEmptyData,
        CliError::MissingArtifact(_) => HrStatus::HrMissingArtifact,
        CliError::Internal(_) => HrStatus::HrInternal,
    }
}

fn fail(err: CliError) -> HrStatus {
    set_error(err.message());
    status_of(&err)
}

/// Last error message on this thread, as a newly allocated C string, or null
/// when no error has been recorded. Free with [`hr_string_free`].
#[no_mangle]
pub extern "C" fn hr_last_error() -> *mut c_char {
    LAST_ERROR.with(|slot| match &*slot.borrow() {
        Some(msg) => msg.clone().into_raw(),
        None => std::ptr::null_mut(),
    })
}

/// Frees a string allocated by this library.
///
/// # Safety
/// `s` must be null or a pointer previously returned by a `hr_*` function and
/// not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hr_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

unsafe fn str_arg<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, HrStatus> {
    if ptr.is_null() {
        set_error(&format!("{what} must not be null"));
        return Err(HrStatus::HrNullPointer);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error(&format!("{what} is not valid UTF-8"));
        HrStatus::HrInvalidUtf8
    })
}

unsafe fn opt_str_arg<'a>(ptr: *const c_char, what: &str) -> Result<Option<&'a str>, HrStatus> {
    if ptr.is_null() {
        return Ok(None);
    }
    str_arg(ptr, what).map(Some)
}

/// Builds the effective run config from an optional config file and optional
/// override lines (`key = value`, newline separated, same keys as the file).
fn effective_config(
    config_path: Option<&str>,
    overrides: Option<&str>,
) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();
    if let Some(path) = config_path {
        let path = Path::new(path);
        if !path.exists() {
            return Err(CliError::MissingArtifact(format!(
                "config file {} does not exist",
                path.display()
            )));
        }
        cfg.apply_file(path).map_err(CliError::Config)?;
    }
    if let Some(text) = overrides {
        cfg.apply_text(text, "overrides").map_err(CliError::Config)?;
    }
    Ok(cfg)
}

fn ensure_out(out_dir: &str) -> Result<PathBuf, CliError> {
    let out = PathBuf::from(out_dir);
    std::fs::create_dir_all(&out)
        .map_err(|e| CliError::Internal(format!("cannot create {}: {e}", out.display())))?;
    Ok(out)
}

type Step = fn(&RunConfig, &Path) -> Result<(), CliError>;

unsafe fn run_step(
    out_dir: *const c_char,
    config_path: *const c_char,
    overrides: *const c_char,
    step: Step,
) -> HrStatus {
    let out_dir = match str_arg(out_dir, "out_dir") {
        Ok(s) => s,
        Err(code) => return code,
    };
    let config_path = match opt_str_arg(config_path, "config_path") {
        Ok(s) => s,
        Err(code) => return code,
    };
    let overrides = match opt_str_arg(overrides, "overrides") {
        Ok(s) => s,
        Err(code) => return code,
    };
    let result = effective_config(config_path, overrides)
        .and_then(|cfg| ensure_out(out_dir).map(|out| (cfg, out)))
        .and_then(|(cfg, out)| step(&cfg, &out));
    match result {
        Ok(()) => HrStatus::HrOk,
        Err(e) => fail(e),
    }
}

/// Generates the synthetic dataset into `out_dir`. `config_path` and
/// `overrides` may be null.
///
/// # Safety
/// Pointer arguments must be null or valid NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn hr_run_synth(
    out_dir: *const c_char,
    config_path: *const c_char,
    overrides: *const c_char,
) -> HrStatus {
    run_step(out_dir, config_path, overrides, |cfg, out| {
        cli::cmd_synth(cfg, out)
    })
}

/// Scores, reduces and materializes the interaction matrix and training rows.
///
/// # Safety
/// Pointer arguments must be null or valid NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn hr_run_prep(
    out_dir: *const c_char,
    config_path: *const c_char,
    overrides: *const c_char,
) -> HrStatus {
    run_step(out_dir, config_path, overrides, |cfg, out| {
        cli::cmd_prep(cfg, out, &out.join(cli::EVENTS_FILE))
    })
}

/// Fits the implicit-feedback ALS factor model.
///
/// # Safety
/// Pointer arguments must be null or valid NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn hr_run_als(
    out_dir: *const c_char,
    config_path: *const c_char,
    overrides: *const c_char,
) -> HrStatus {
    run_step(out_dir, config_path, overrides, cli::cmd_als)
}

/// Trains the hybrid network and writes the model directory.
///
/// # Safety
/// Pointer arguments must be null or valid NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn hr_run_train(
    out_dir: *const c_char,
    config_path: *const c_char,
    overrides: *const c_char,
) -> HrStatus {
    run_step(out_dir, config_path, overrides, cli::cmd_train)
}

/// Evaluates the trained model on the validation split.
///
/// # Safety
/// Pointer arguments must be null or valid NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn hr_run_eval(
    out_dir: *const c_char,
    config_path: *const c_char,
    overrides: *const c_char,
) -> HrStatus {
    run_step(out_dir, config_path, overrides, cli::cmd_eval)
}

/// Runs the greedy coverage analysis. `seed_device` may be null.
///
/// # Safety
/// Pointer arguments must be null or valid NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn hr_run_coverage(
    out_dir: *const c_char,
    config_path: *const c_char,
    overrides: *const c_char,
    seed_device: *const c_char,
) -> HrStatus {
    let seed = match opt_str_arg(seed_device, "seed_device") {
        Ok(s) => s.map(String::from),
        Err(code) => return code,
    };
    let out_dir_s = match str_arg(out_dir, "out_dir") {
        Ok(s) => s,
        Err(code) => return code,
    };
    let config_path = match opt_str_arg(config_path, "config_path") {
        Ok(s) => s,
        Err(code) => return code,
    };
    let overrides = match opt_str_arg(overrides, "overrides") {
        Ok(s) => s,
        Err(code) => return code,
    };
    let result = effective_config(config_path, overrides)
        .and_then(|cfg| ensure_out(out_dir_s).map(|out| (cfg, out)))
        .and_then(|(cfg, out)| cli::cmd_coverage(&cfg, &out, seed));
    match result {
        Ok(()) => HrStatus::HrOk,
        Err(e) => fail(e),
    }
}

/// Opaque handle around a loaded hybrid model. Queries are serialized
/// internally, so a handle may be shared across threads.
pub struct HrRecommender {
    net: Mutex<HybridNet>,
}

/// Loads a trained model directory (the `model/` directory written by
/// `hr_run_train`) into a recommender handle.
///
/// # Safety
/// `model_dir` must be a valid NUL-terminated string; `out` must be a valid
/// pointer to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn hr_recommender_open(
    model_dir: *const c_char,
    out: *mut *mut HrRecommender,
) -> HrStatus {
    if out.is_null() {
        set_error("out must not be null");
        return HrStatus::HrNullPointer;
    }
    *out = std::ptr::null_mut();
    let dir = match str_arg(model_dir, "model_dir") {
        Ok(s) => s,
        Err(code) => return code,
    };
    let path = Path::new(dir);
    if !path.join(persist::CONFIG_FILE).exists() {
        set_error(&format!("missing artifact: {}", path.join(persist::CONFIG_FILE).display()));
        return HrStatus::HrMissingArtifact;
    }
    match persist::load(path) {
        Ok(net) => {
            let handle = Box::new(HrRecommender {
                net: Mutex::new(net),
            });
            *out = Box::into_raw(handle);
            HrStatus::HrOk
        }
        Err(e) => {
            set_error(&e.to_string());
            HrStatus::HrConfig
        }
    }
}

/// Releases a recommender handle.
///
/// # Safety
/// `rec` must be null or a pointer from [`hr_recommender_open`] not yet
/// closed.
#[no_mangle]
pub unsafe extern "C" fn hr_recommender_close(rec: *mut HrRecommender) {
    if !rec.is_null() {
        drop(Box::from_raw(rec));
    }
}

/// Number of ranked devices the model can produce (the upper bound for `k`).
///
/// # Safety
/// `rec` must be a live handle from [`hr_recommender_open`].
#[no_mangle]
pub unsafe extern "C" fn hr_recommender_device_count(rec: *const HrRecommender) -> u32 {
    if rec.is_null() {
        return 0;
    }
    let rec = &*rec;
    let net = rec.net.lock().expect("recommender lock poisoned");
    net.config.device_count as u32
}

/// Ranks devices for a visitor. `visitor_id` null means unknown (cold),
/// `sequence`/`features` may be null/empty for cold queries. Writes `k`
/// device-id strings (free each with [`hr_string_free`]) and `k` scores.
///
/// # Safety
/// `rec` must be a live handle. `sequence` must point to `sequence_len` valid
/// strings, `features` to `features_len` doubles, `out_device_ids` and
/// `out_scores` to `k` writable slots each.
#[no_mangle]
pub unsafe extern "C" fn hr_recommend(
    rec: *mut HrRecommender,
    visitor_id: *const c_char,
    sequence: *const *const c_char,
    sequence_len: usize,
    features: *const f64,
    features_len: usize,
    k: u32,
    include_seen: bool,
    out_device_ids: *mut *mut c_char,
    out_scores: *mut f64,
) -> HrStatus {
    if rec.is_null() || out_device_ids.is_null() || out_scores.is_null() {
        set_error("rec / out_device_ids / out_scores must not be null");
        return HrStatus::HrNullPointer;
    }
    let visitor = match opt_str_arg(visitor_id, "visitor_id") {
        Ok(s) => s.unwrap_or(hybridrec::dataset::UNK_TOKEN).to_string(),
        Err(code) => return code,
    };
    let mut device_sequence = Vec::with_capacity(sequence_len);
    if sequence_len > 0 {
        if sequence.is_null() {
            set_error("sequence is null but sequence_len > 0");
            return HrStatus::HrNullPointer;
        }
        for i in 0..sequence_len {
            match str_arg(*sequence.add(i), "sequence entry") {
                Ok(s) => device_sequence.push(s.to_string()),
                Err(code) => return code,
            }
        }
    }
    let features = if features_len > 0 {
        if features.is_null() {
            set_error("features is null but features_len > 0");
            return HrStatus::HrNullPointer;
        }
        Some(std::slice::from_raw_parts(features, features_len).to_vec())
    } else {
        None
    };
    let context = VisitorContext {
        visitor_id: visitor,
        device_sequence,
        features,
    };
    let rec = &*rec;
    let mut net = rec.net.lock().expect("recommender lock poisoned");
    match hybridnet::recommend(&mut net, &context, k as usize, include_seen) {
        Ok(ranked) => {
            for (i, (device, score)) in ranked.iter().enumerate() {
                let c = CString::new(device.as_str()).unwrap_or_default();
                *out_device_ids.add(i) = c.into_raw();
                *out_scores.add(i) = *score;
            }
            // recommend may return fewer than k only when k > devices, which
            // it rejects; null-terminate defensively anyway
            for i in ranked.len()..k as usize {
                *out_device_ids.add(i) = std::ptr::null_mut();
                *out_scores.add(i) = f64::NAN;
            }
            HrStatus::HrOk
        }
        Err(e) => {
            set_error(&e.to_string());
            HrStatus::HrConfig
        }
    }
}
