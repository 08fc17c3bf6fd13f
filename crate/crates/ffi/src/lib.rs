//! C ABI over `amdnloc`.
//!
//! Every fallible call returns an `int32_t` status: `AMDNLOC_OK` on
//! success, otherwise one of the `AMDNLOC_ERR_*` codes. The message of the
//! most recent failure on the calling thread is available through
//! [`amdnloc_last_error_message`]. Handles are opaque and must be released
//! with their matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use amdnloc::dataset_io::import_dataset;
use amdnloc::image::{adcam_to_image, cfr_to_image, FingerprintImage};
use amdnloc::nn::{load_model, LocalizerModel};
use amdnloc::Error;

pub const AMDNLOC_OK: i32 = 0;
pub const AMDNLOC_ERR_NULL_ARGUMENT: i32 = 1;
pub const AMDNLOC_ERR_INVALID_UTF8: i32 = 2;
pub const AMDNLOC_ERR_PANIC: i32 = 3;
pub const AMDNLOC_ERR_BUFFER_TOO_SMALL: i32 = 4;
pub const AMDNLOC_ERR_INDEX_OUT_OF_RANGE: i32 = 5;
pub const AMDNLOC_ERR_DOMAIN: i32 = 10;
pub const AMDNLOC_ERR_DIMENSION_MISMATCH: i32 = 11;
pub const AMDNLOC_ERR_MISSING_MANIFEST: i32 = 12;
pub const AMDNLOC_ERR_MALFORMED_MANIFEST: i32 = 13;
pub const AMDNLOC_ERR_TRUNCATED_BINARY: i32 = 14;
pub const AMDNLOC_ERR_MISSING_ARTIFACT: i32 = 15;
pub const AMDNLOC_ERR_INVALID_CONFIG: i32 = 16;
pub const AMDNLOC_ERR_DEGENERATE_TEMPLATE: i32 = 17;
pub const AMDNLOC_ERR_NO_USABLE_REGIONS: i32 = 18;
pub const AMDNLOC_ERR_RETRY_BUDGET_EXHAUSTED: i32 = 19;
pub const AMDNLOC_ERR_FULLY_SHADOWED: i32 = 20;
pub const AMDNLOC_ERR_REGION_MISSING_FROM_TRAIN: i32 = 21;
pub const AMDNLOC_ERR_NON_FINITE_LOSS: i32 = 22;
pub const AMDNLOC_ERR_UNKNOWN_BASELINE: i32 = 23;
pub const AMDNLOC_ERR_IO: i32 = 30;
pub const AMDNLOC_ERR_JSON: i32 = 31;

/// A dataset directory converted to network-ready images.
pub struct AmdnlocDataset {
    positions: Vec<[f64; 2]>,
    cfr: Vec<FingerprintImage>,
    adcam: Vec<FingerprintImage>,
}

/// A trained localizer loaded from a model file.
pub struct AmdnlocModel {
    model: LocalizerModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Vec<u8>> = const { RefCell::new(Vec::new()) };
}

fn set_last_error(msg: &str) {
    LAST_ERROR.with(|e| {
        let mut e = e.borrow_mut();
        e.clear();
        e.extend(msg.bytes().filter(|b| *b != 0));
    });
}

struct Failure(i32, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(e.code(), e.to_string())
    }
}

fn fail<T>(code: i32, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(code, msg.into()))
}

/// Runs `f`, records any failure and converts panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            AMDNLOC_OK
        }
        Ok(Err(Failure(code, msg))) => {
            set_last_error(&msg);
            code
        }
        Err(_) => {
            set_last_error("internal panic");
            AMDNLOC_ERR_PANIC
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return fail(AMDNLOC_ERR_NULL_ARGUMENT, format!("{what} is null"));
    }
    match CStr::from_ptr(p).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => fail(AMDNLOC_ERR_INVALID_UTF8, format!("{what} is not UTF-8")),
    }
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure(AMDNLOC_ERR_NULL_ARGUMENT, format!("{what} is null")))
}

fn sample<T>(items: &[T], index: usize) -> Result<&T, Failure> {
    items.get(index).ok_or_else(|| {
        Failure(
            AMDNLOC_ERR_INDEX_OUT_OF_RANGE,
            format!("sample {index} out of range for {} samples", items.len()),
        )
    })
}

unsafe fn write_out(src: &[f64], out: *mut f64, len: usize) -> Result<(), Failure> {
    if out.is_null() {
        return fail(AMDNLOC_ERR_NULL_ARGUMENT, "output buffer is null");
    }
    if len < src.len() {
        return fail(
            AMDNLOC_ERR_BUFFER_TOO_SMALL,
            format!("buffer holds {len} values, {} needed", src.len()),
        );
    }
    ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    Ok(())
}

/// Copies the last error message of this thread into `buf`, NUL-terminated
/// and truncated to `len - 1` bytes. Returns the full message length, so a
/// caller can size a buffer with a first call using `len = 0`.
///
/// # Safety
/// `buf` must be valid for `len` bytes or null when `len` is 0.
#[no_mangle]
pub unsafe extern "C" fn amdnloc_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = e.len().min(len - 1);
            ptr::copy_nonoverlapping(e.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        e.len()
    })
}

/// Loads a dataset directory written by the `synth` stage.
///
/// # Safety
/// `dir` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn amdnloc_dataset_open(dir: *const c_char, out: *mut *mut AmdnlocDataset) -> i32 {
    guard(|| {
        if out.is_null() {
            return fail(AMDNLOC_ERR_NULL_ARGUMENT, "out is null");
        }
        *out = ptr::null_mut();
        let dir = path_arg(dir, "dir")?;
        let (samples, _) = import_dataset(&dir)?;
        let handle = AmdnlocDataset {
            positions: samples.iter().map(|s| s.position).collect(),
            cfr: samples.iter().map(|s| cfr_to_image(&s.cfr)).collect(),
            adcam: samples.iter().map(|s| adcam_to_image(&s.adcam)).collect(),
        };
        *out = Box::into_raw(Box::new(handle));
        Ok(())
    })
}

/// # Safety
/// `ds` must come from [`amdnloc_dataset_open`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn amdnloc_dataset_free(ds: *mut AmdnlocDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Number of samples; 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn amdnloc_dataset_len(ds: *const AmdnlocDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.positions.len())
}

/// Ground-truth position of sample `index`, in metres.
///
/// # Safety
/// `ds` must be a live handle; `out_xy` must hold 2 doubles.
#[no_mangle]
pub unsafe extern "C" fn amdnloc_dataset_position(
    ds: *const AmdnlocDataset,
    index: usize,
    out_xy: *mut f64,
) -> i32 {
    guard(|| {
        let d = ref_arg(ds, "dataset")?;
        write_out(sample(&d.positions, index)?, out_xy, 2)
    })
}

/// Pixel count of a CFR image (2 channels: magnitude then phase).
///
/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn amdnloc_dataset_cfr_image_len(ds: *const AmdnlocDataset) -> usize {
    ds.as_ref()
        .and_then(|d| d.cfr.first())
        .map_or(0, |i| i.pixels().len())
}

/// Pixel count of an ADCAM image.
///
/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn amdnloc_dataset_adcam_image_len(ds: *const AmdnlocDataset) -> usize {
    ds.as_ref()
        .and_then(|d| d.adcam.first())
        .map_or(0, |i| i.pixels().len())
}

/// Copies the channel-major CFR image of sample `index` into `out`.
///
/// # Safety
/// `ds` must be a live handle; `out` must be valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn amdnloc_dataset_cfr_image(
    ds: *const AmdnlocDataset,
    index: usize,
    out: *mut f64,
    len: usize,
) -> i32 {
    guard(|| {
        let d = ref_arg(ds, "dataset")?;
        write_out(sample(&d.cfr, index)?.pixels(), out, len)
    })
}

/// Copies the ADCAM image of sample `index` into `out`.
///
/// # Safety
/// `ds` must be a live handle; `out` must be valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn amdnloc_dataset_adcam_image(
    ds: *const AmdnlocDataset,
    index: usize,
    out: *mut f64,
    len: usize,
) -> i32 {
    guard(|| {
        let d = ref_arg(ds, "dataset")?;
        write_out(sample(&d.adcam, index)?.pixels(), out, len)
    })
}

/// Loads a model file written by the `train` stage.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn amdnloc_model_load(path: *const c_char, out: *mut *mut AmdnlocModel) -> i32 {
    guard(|| {
        if out.is_null() {
            return fail(AMDNLOC_ERR_NULL_ARGUMENT, "out is null");
        }
        *out = ptr::null_mut();
        let model = load_model(&path_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(AmdnlocModel { model }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`amdnloc_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn amdnloc_model_free(model: *mut AmdnlocModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of regression heads; 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn amdnloc_model_num_heads(model: *const AmdnlocModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.num_heads())
}

/// Number of input branches; 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn amdnloc_model_num_inputs(model: *const AmdnlocModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.architecture().branches.len())
}

/// Expected length of input `branch`; 0 when out of range.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn amdnloc_model_input_len(model: *const AmdnlocModel, branch: usize) -> usize {
    model
        .as_ref()
        .and_then(|m| m.model.architecture().branches.get(branch))
        .map_or(0, |b| b.input_len())
}

/// Predicts a position with head `head`. `inputs` holds one pointer per
/// branch, each to exactly [`amdnloc_model_input_len`] doubles.
///
/// # Safety
/// `model` must be a live handle, `inputs` valid for `num_inputs`
/// pointers, and `out_xy` must hold 2 doubles.
#[no_mangle]
pub unsafe extern "C" fn amdnloc_model_predict(
    model: *const AmdnlocModel,
    inputs: *const *const f64,
    num_inputs: usize,
    head: usize,
    out_xy: *mut f64,
) -> i32 {
    guard(|| {
        let m = &ref_arg(model, "model")?.model;
        let branches = &m.architecture().branches;
        if num_inputs != branches.len() {
            return fail(
                AMDNLOC_ERR_DIMENSION_MISMATCH,
                format!("{num_inputs} inputs for {} branches", branches.len()),
            );
        }
        if inputs.is_null() {
            return fail(AMDNLOC_ERR_NULL_ARGUMENT, "inputs is null");
        }
        let mut slices = Vec::with_capacity(num_inputs);
        for (b, spec) in branches.iter().enumerate() {
            let p = *inputs.add(b);
            if p.is_null() {
                return fail(AMDNLOC_ERR_NULL_ARGUMENT, format!("input {b} is null"));
            }
            slices.push(std::slice::from_raw_parts(p, spec.input_len()));
        }
        let xy = m.forward(&slices, head)?;
        write_out(&xy, out_xy, 2)
    })
}
