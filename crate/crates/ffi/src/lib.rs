//! C interface to fairaudit.
//!
//! Objects cross the boundary as opaque handles created by `*_new`/`*_load`
//! style functions and released with the matching `*_free`. Every fallible
//! function returns an [`FaStatus`]; on failure a description is available
//! from [`fa_last_error_message`] on the same thread until the next failing
//! call. Panics never unwind into C: they are reported as
//! `FA_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use fairaudit::audit::{self, DeltaSet, Direction};
use fairaudit::metrics;
use fairaudit::model::{self, TrainedModel};
use fairaudit::{Error, PredictionSet};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    Io = 4,
    Parse = 5,
    /// A group or (group, label) cell has no instances.
    Degenerate = 6,
    IdMismatch = 7,
    MissingArtifact = 8,
    Panic = 9,
    Internal = 10,
}

impl From<&Error> for FaStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Io { .. } => FaStatus::Io,
            Error::Csv { .. } | Error::Parse { .. } | Error::Config(_) => FaStatus::Parse,
            Error::DimensionMismatch { .. } => FaStatus::DimensionMismatch,
            Error::DegenerateGroup(_) | Error::DegenerateCell { .. } | Error::Empty(_) => {
                FaStatus::Degenerate
            }
            Error::IdMismatch { .. } => FaStatus::IdMismatch,
            Error::MissingArtifact(_) => FaStatus::MissingArtifact,
            Error::InvalidArgument(_) | Error::NonFinite(_) => FaStatus::InvalidArgument,
            _ => FaStatus::Internal,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

struct Failure(FaStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(FaStatus::from(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(FaStatus::NullPointer, format!("{what} is null"))
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> FaStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => FaStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_last_error(message);
            status
        }
        Err(_) => {
            set_last_error("internal panic".into());
            FaStatus::Panic
        }
    }
}

/// # Safety
/// `data` must point to `n` readable values, or be anything when `n == 0`.
unsafe fn slice<'a, T>(data: *const T, n: usize, what: &str) -> Result<&'a [T], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    if data.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(data, n))
}

/// # Safety
/// `handle` must be null or a live handle of type `T`.
unsafe fn handle<'a, T>(handle: *const T, what: &str) -> Result<&'a T, Failure> {
    handle.as_ref().ok_or_else(|| null(what))
}

fn bits(values: &[u8], what: &str) -> Result<(), Failure> {
    match values.iter().find(|&&v| v > 1) {
        Some(v) => Err(Failure(
            FaStatus::InvalidArgument,
            format!("{what} value {v} is not 0 or 1"),
        )),
        None => Ok(()),
    }
}

/// # Safety
/// `out` must be null or writable.
unsafe fn emit<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Last error message on this thread, or null. The string stays valid
/// until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn fa_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Scores and hard labels for a set of instances.
pub struct FaPredictions(PredictionSet);

/// A trained biased or fair model loaded from a model file.
pub struct FaModel {
    model: TrainedModel,
    fingerprint: CString,
}

/// Instances whose label differs between two prediction sets.
pub struct FaDelta(DeltaSet);

/// Accuracy and group fairness of one prediction set. Group 1 is the
/// privileged group; differences are group 1 minus group 0.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FaFairnessScores {
    pub accuracy: f64,
    pub positive_rate_s0: f64,
    pub positive_rate_s1: f64,
    pub p_rule: f64,
    pub tpr_s0: f64,
    pub tpr_s1: f64,
    pub fpr_s0: f64,
    pub fpr_s1: f64,
    pub d_tpr: f64,
    pub d_fpr: f64,
}

/// Build a prediction set; labels are `score > threshold`.
///
/// # Safety
/// `ids` and `scores` must point to `n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fa_predictions_from_scores(
    ids: *const u64,
    scores: *const f64,
    n: usize,
    threshold: f64,
    out: *mut *mut FaPredictions,
) -> FaStatus {
    guard(|| {
        let ids = slice(ids, n, "ids")?.to_vec();
        let scores = slice(scores, n, "scores")?.to_vec();
        let preds = PredictionSet::from_scores(ids, scores, threshold)?;
        emit(out, FaPredictions(preds))
    })
}

/// # Safety
/// `preds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fa_predictions_len(preds: *const FaPredictions) -> usize {
    preds.as_ref().map_or(0, |p| p.0.len())
}

/// Copy the hard labels into `out`, which must hold exactly `n` values.
///
/// # Safety
/// `preds` must be a live handle; `out` must be writable for `n` bytes.
#[no_mangle]
pub unsafe extern "C" fn fa_predictions_labels(
    preds: *const FaPredictions,
    out: *mut u8,
    n: usize,
) -> FaStatus {
    guard(|| {
        let p = handle(preds, "predictions")?;
        if n != p.0.len() {
            return Err(Error::DimensionMismatch {
                expected: p.0.len(),
                got: n,
            }
            .into());
        }
        if n > 0 && out.is_null() {
            return Err(null("out"));
        }
        if n > 0 {
            ptr::copy_nonoverlapping(p.0.labels.as_ptr(), out, n);
        }
        Ok(())
    })
}

/// # Safety
/// `preds` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn fa_predictions_free(preds: *mut FaPredictions) {
    if !preds.is_null() {
        drop(Box::from_raw(preds));
    }
}

/// Load a model file written by the `fairaudit` pipeline.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fa_model_load(path: *const c_char, out: *mut *mut FaModel) -> FaStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Failure(FaStatus::InvalidArgument, "path is not UTF-8".into()))?;
        let model = TrainedModel::load(Path::new(path))?;
        let fingerprint = CString::new(model.fingerprint()).unwrap_or_default();
        emit(out, FaModel { model, fingerprint })
    })
}

/// Hex fingerprint of the classifier parameters; owned by the handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fa_model_fingerprint(model: *const FaModel) -> *const c_char {
    model
        .as_ref()
        .map_or(ptr::null(), |m| m.fingerprint.as_ptr())
}

/// Score a row-major `rows × cols` feature matrix (already standardized
/// like the training data).
///
/// # Safety
/// `x` must hold `rows * cols` values, `ids` `rows` values; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn fa_model_predict(
    model: *const FaModel,
    x: *const f64,
    rows: usize,
    cols: usize,
    ids: *const u64,
    threshold: f64,
    out: *mut *mut FaPredictions,
) -> FaStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let len = rows
            .checked_mul(cols)
            .ok_or_else(|| Failure(FaStatus::InvalidArgument, "rows * cols overflows".into()))?;
        let x = ndarray::ArrayView2::from_shape((rows, cols), slice(x, len, "x")?)
            .map_err(|e| Failure(FaStatus::InvalidArgument, e.to_string()))?;
        let ids = slice(ids, rows, "ids")?;
        if cols != m.model.classifier().input_dim() {
            return Err(Error::DimensionMismatch {
                expected: m.model.classifier().input_dim(),
                got: cols,
            }
            .into());
        }
        let preds = model::predict(&m.model, ids, x, threshold)?;
        emit(out, FaPredictions(preds))
    })
}

/// # Safety
/// `model` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn fa_model_free(model: *mut FaModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Accuracy, positive rates, p%-rule and error-rate gaps.
///
/// # Safety
/// `y` and `s` must hold `n` values (0 or 1); `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fa_fairness_scores(
    preds: *const FaPredictions,
    y: *const u8,
    s: *const u8,
    n: usize,
    out: *mut FaFairnessScores,
) -> FaStatus {
    guard(|| {
        let p = handle(preds, "predictions")?;
        let y = slice(y, n, "y")?;
        let s = slice(s, n, "s")?;
        bits(y, "y")?;
        bits(s, "s")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let f = metrics::fairness_scores(&p.0, y, s)?;
        *out = FaFairnessScores {
            accuracy: f.accuracy,
            positive_rate_s0: f.positive_rate_by_group.0,
            positive_rate_s1: f.positive_rate_by_group.1,
            p_rule: f.p_rule,
            tpr_s0: f.tpr_by_group.0,
            tpr_s1: f.tpr_by_group.1,
            fpr_s0: f.fpr_by_group.0,
            fpr_s1: f.fpr_by_group.1,
            d_tpr: f.d_tpr,
            d_fpr: f.d_fpr,
        };
        Ok(())
    })
}

/// Instances whose label differs between the biased predictions `f` and
/// the fair predictions `g`; both must cover the same ids in the same
/// order.
///
/// # Safety
/// `f`, `g` must be live handles; `s` must hold `n` values; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn fa_delta_compute(
    f: *const FaPredictions,
    g: *const FaPredictions,
    s: *const u8,
    n: usize,
    out: *mut *mut FaDelta,
) -> FaStatus {
    guard(|| {
        let f = handle(f, "f")?;
        let g = handle(g, "g")?;
        let s = slice(s, n, "s")?;
        bits(s, "s")?;
        let delta = audit::compute_delta(&f.0, &g.0, s)?;
        emit(out, FaDelta(delta))
    })
}

/// # Safety
/// `delta` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fa_delta_len(delta: *const FaDelta) -> usize {
    delta.as_ref().map_or(0, |d| d.0.len())
}

/// Copy the changed ids, ascending, into `out` (exactly `n` slots).
///
/// # Safety
/// `delta` must be a live handle; `out` must be writable for `n` values.
#[no_mangle]
pub unsafe extern "C" fn fa_delta_ids(delta: *const FaDelta, out: *mut u64, n: usize) -> FaStatus {
    guard(|| {
        let d = handle(delta, "delta")?;
        let ids: Vec<u64> = d.0.ids().into_iter().collect();
        if n != ids.len() {
            return Err(Error::DimensionMismatch {
                expected: ids.len(),
                got: n,
            }
            .into());
        }
        if n > 0 {
            if out.is_null() {
                return Err(null("out"));
            }
            ptr::copy_nonoverlapping(ids.as_ptr(), out, n);
        }
        Ok(())
    })
}

/// |Δ| / n.
///
/// # Safety
/// `delta` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fa_delta_impact_fraction(
    delta: *const FaDelta,
    out: *mut f64,
) -> FaStatus {
    guard(|| {
        let d = handle(delta, "delta")?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = audit::impact_fraction(&d.0)?;
        Ok(())
    })
}

/// Changed-instance counts as `[positive s=0, positive s=1, negative s=0,
/// negative s=1]`; positive means 0 → 1.
///
/// # Safety
/// `delta` must be a live handle; `out` must be writable for 4 values.
#[no_mangle]
pub unsafe extern "C" fn fa_delta_direction_counts(
    delta: *const FaDelta,
    out: *mut usize,
) -> FaStatus {
    guard(|| {
        let d = handle(delta, "delta")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let counts = [
            d.0.count(Direction::Positive, 0),
            d.0.count(Direction::Positive, 1),
            d.0.count(Direction::Negative, 0),
            d.0.count(Direction::Negative, 1),
        ];
        ptr::copy_nonoverlapping(counts.as_ptr(), out, 4);
        Ok(())
    })
}

/// # Safety
/// `delta` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn fa_delta_free(delta: *mut FaDelta) {
    if !delta.is_null() {
        drop(Box::from_raw(delta));
    }
}

/// Intersection over union of two or more Δ-sets over the same instances.
/// When every set is empty the value is 1 and `degenerate` is set.
///
/// # Safety
/// `deltas` must hold `count` live handles; the outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn fa_iou(
    deltas: *const *const FaDelta,
    count: usize,
    value: *mut f64,
    degenerate: *mut bool,
) -> FaStatus {
    guard(|| {
        let handles = slice(deltas, count, "deltas")?;
        let mut sets = Vec::with_capacity(count);
        for &h in handles {
            sets.push(&handle(h, "delta")?.0);
        }
        if value.is_null() || degenerate.is_null() {
            return Err(null("out"));
        }
        let iou = audit::iou(&sets)?;
        *value = iou.value;
        *degenerate = iou.degenerate;
        Ok(())
    })
}
