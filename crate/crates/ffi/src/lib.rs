//! C ABI over `hyperinr`.
//!
//! Models and INR weight sets are opaque heap handles released with their
//! matching `_free` function. Every fallible call returns a
//! [`HyperinrStatus`]; on failure a description is available from
//! [`hyperinr_last_error`] on the same thread until the next failing call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use hyperinr::audio::{resampled_len, AudioBuffer};
use hyperinr::hypernet::HyperNetModel;
use hyperinr::inr::{make_grid, TargetNetConfig, TargetNetParams};
use hyperinr::metrics::{lsd, mse, si_snr};
use hyperinr::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HyperinrStatus {
    Ok = 0,
    NullArgument = 1,
    Io = 2,
    Format = 3,
    InvalidArgument = 4,
    InputTooShort = 5,
    Degenerate = 6,
    Panic = 7,
}

/// Opaque hypernetwork handle.
pub struct HyperinrModel(HyperNetModel);

/// Opaque INR weight set.
pub struct HyperinrInr(TargetNetParams);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(e: &Error) -> HyperinrStatus {
    match e {
        Error::Io(_) | Error::CheckpointIo(_) => HyperinrStatus::Io,
        Error::BadMagic { .. }
        | Error::VersionMismatch { .. }
        | Error::LengthMismatch { .. }
        | Error::CorruptHeader(_)
        | Error::UnsupportedFormat(_)
        | Error::Json(_) => HyperinrStatus::Format,
        Error::InputTooShort { .. } | Error::TooFewSamples(_) => HyperinrStatus::InputTooShort,
        Error::DegenerateSignal | Error::SilentReference => HyperinrStatus::Degenerate,
        _ => HyperinrStatus::InvalidArgument,
    }
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> HyperinrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HyperinrStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            HyperinrStatus::Panic
        }
    }
}

struct Failure(HyperinrStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(HyperinrStatus::NullArgument, format!("{what} is null"))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(HyperinrStatus::InvalidArgument, "path is not UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn buffer(p: *const f64, len: usize, rate: u32, what: &str) -> Result<AudioBuffer, Failure> {
    Ok(AudioBuffer::new(slice_arg(p, len, what)?.to_vec(), rate)?)
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn hyperinr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Loads an `HSCK` checkpoint.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hyperinr_model_load(path: *const c_char, out: *mut *mut HyperinrModel) -> HyperinrStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let ckpt = HyperNetModel::load_checkpoint(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(HyperinrModel(ckpt.model)));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`hyperinr_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hyperinr_model_free(model: *mut HyperinrModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Native sampling rate of the model, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hyperinr_model_sample_rate(model: *const HyperinrModel) -> u32 {
    model.as_ref().map_or(0, |m| m.0.config().sample_rate)
}

/// Number of hypernetwork parameters, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hyperinr_model_param_count(model: *const HyperinrModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.param_count())
}

/// Predicts INR weights for `len` samples at the model's native rate.
///
/// # Safety
/// `samples` must point to `len` doubles; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hyperinr_model_encode(
    model: *const HyperinrModel,
    samples: *const f64,
    len: usize,
    out: *mut *mut HyperinrInr,
) -> HyperinrStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let x = buffer(samples, len, m.0.config().sample_rate, "samples")?;
        let inr = m.0.predict_inr(&x)?;
        *out = Box::into_raw(Box::new(HyperinrInr(inr)));
        Ok(())
    })
}

/// Reads an `HSIR` file.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hyperinr_inr_load(path: *const c_char, out: *mut *mut HyperinrInr) -> HyperinrStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let bytes = std::fs::read(path_arg(path)?).map_err(Error::from)?;
        *out = Box::into_raw(Box::new(HyperinrInr(TargetNetParams::from_bytes(&bytes)?)));
        Ok(())
    })
}

/// Writes an `HSIR` file.
///
/// # Safety
/// `inr` must be a live handle and `path` a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn hyperinr_inr_save(inr: *const HyperinrInr, path: *const c_char) -> HyperinrStatus {
    guard(|| {
        let inr = inr.as_ref().ok_or_else(|| null("inr"))?;
        std::fs::write(path_arg(path)?, inr.0.to_bytes()).map_err(Error::from)?;
        Ok(())
    })
}

/// # Safety
/// `inr` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hyperinr_inr_free(inr: *mut HyperinrInr) {
    if !inr.is_null() {
        drop(Box::from_raw(inr));
    }
}

/// Length of the INR weight vector, or 0 for a null handle.
///
/// # Safety
/// `inr` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hyperinr_inr_param_count(inr: *const HyperinrInr) -> usize {
    inr.as_ref().map_or(0, |i| i.0.theta().len())
}

/// Renders `len` samples on the uniform grid over `[0, 1]` into `out`.
///
/// # Safety
/// `inr` must be a live handle and `out` must have room for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn hyperinr_inr_render(
    inr: *const HyperinrInr,
    rate: u32,
    out: *mut f64,
    len: usize,
) -> HyperinrStatus {
    guard(|| {
        let inr = inr.as_ref().ok_or_else(|| null("inr"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let audio = inr.0.render(&make_grid(len, rate)?)?;
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(audio.samples());
        Ok(())
    })
}

/// Output length when converting `len` samples between two rates.
#[no_mangle]
pub extern "C" fn hyperinr_resampled_len(len: usize, source_rate: u32, target_rate: u32) -> usize {
    if source_rate == 0 {
        return 0;
    }
    resampled_len(len, source_rate, target_rate)
}

/// Parameter count of a target network with embedding size `l` and
/// `layers` hidden widths.
///
/// # Safety
/// `widths` must point to `layers` values and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn hyperinr_target_param_count(
    l: usize,
    widths: *const usize,
    layers: usize,
    out: *mut usize,
) -> HyperinrStatus {
    guard(|| {
        if out.is_null() || (layers > 0 && widths.is_null()) {
            return Err(null("argument"));
        }
        let w = if layers == 0 {
            Vec::new()
        } else {
            std::slice::from_raw_parts(widths, layers).to_vec()
        };
        *out = TargetNetConfig::new(l, w)?.param_count();
        Ok(())
    })
}

unsafe fn metric(
    x: *const f64,
    y: *const f64,
    len: usize,
    rate: u32,
    out: *mut f64,
    f: fn(&AudioBuffer, &AudioBuffer) -> hyperinr::Result<f64>,
) -> HyperinrStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let a = buffer(x, len, rate, "reference")?;
        let b = buffer(y, len, rate, "estimate")?;
        *out = f(&a, &b)?;
        Ok(())
    })
}

/// Mean squared error.
///
/// # Safety
/// `x` and `y` must point to `len` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn hyperinr_mse(x: *const f64, y: *const f64, len: usize, rate: u32, out: *mut f64) -> HyperinrStatus {
    metric(x, y, len, rate, out, mse)
}

/// Log-spectral distance.
///
/// # Safety
/// `x` and `y` must point to `len` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn hyperinr_lsd(x: *const f64, y: *const f64, len: usize, rate: u32, out: *mut f64) -> HyperinrStatus {
    metric(x, y, len, rate, out, lsd)
}

/// Scale-invariant SNR in dB; `+inf` for a perfect estimate.
///
/// # Safety
/// `x` and `y` must point to `len` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn hyperinr_si_snr(x: *const f64, y: *const f64, len: usize, rate: u32, out: *mut f64) -> HyperinrStatus {
    metric(x, y, len, rate, out, si_snr)
}
