//! C ABI over `gti-core`.
//!
//! Every fallible function returns a [`GtiStatus`]; on failure a message is
//! available from [`gti_last_error`] on the same thread. Handles are opaque
//! and must be released with their matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::OnceLock;

use gti_core::evalharness;
use gti_core::geometry;
use gti_core::integrator::SwitchController;
use gti_core::rtscore::{self, GroundingFeatures, ScoreModel, FEATURE_DIM};
use gti_core::synthworld::{read_dataset, VideoRecord};
use gti_core::{BBox, Error};

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GtiStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    OutOfRange = 5,
    Panic = 6,
}

/// Axis-aligned box: top-left corner plus width and height, in pixels.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtiBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

/// Predicted region-correctness (`r`) and template-quality (`t`) scores.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtiRtScores {
    pub r: f64,
    pub t: f64,
}

/// Opaque trained score model.
pub struct GtiModel(ScoreModel);

/// Opaque greedy switch controller (saved score with per-frame decay).
pub struct GtiSwitch(SwitchController);

/// Opaque dataset; ground-truth tubelets are simulated on first access.
pub struct GtiDataset {
    videos: Vec<VideoRecord>,
    tubelets: Vec<OnceLock<Result<Vec<BBox>, String>>>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn fail(status: GtiStatus, msg: impl Into<String>) -> GtiStatus {
    set_error(msg);
    status
}

fn from_core(e: Error) -> GtiStatus {
    let status = match &e {
        Error::Io { .. } => GtiStatus::Io,
        Error::Json(_) | Error::Config(_) | Error::Data(_) | Error::Query(_) => GtiStatus::Parse,
        Error::FrameOutOfRange { .. } => GtiStatus::OutOfRange,
        _ => GtiStatus::InvalidArgument,
    };
    fail(status, e.to_string())
}

/// Runs `f`, converting panics into [`GtiStatus::Panic`].
fn guard(f: impl FnOnce() -> GtiStatus) -> GtiStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(GtiStatus::Panic, "internal panic"),
    }
}

fn to_box(b: &GtiBox) -> Result<BBox, GtiStatus> {
    BBox::new(b.x, b.y, b.w, b.h).map_err(from_core)
}

fn from_box(b: BBox) -> GtiBox {
    GtiBox { x: b.x, y: b.y, w: b.w, h: b.h }
}

unsafe fn path_arg<'a>(path: *const c_char) -> Result<&'a Path, GtiStatus> {
    if path.is_null() {
        return Err(fail(GtiStatus::NullPointer, "path is null"));
    }
    CStr::from_ptr(path)
        .to_str()
        .map(Path::new)
        .map_err(|_| fail(GtiStatus::InvalidArgument, "path is not valid UTF-8"))
}

unsafe fn boxes(ptr: *const GtiBox, n: usize) -> Result<Vec<BBox>, GtiStatus> {
    if n == 0 {
        return Err(fail(GtiStatus::InvalidArgument, "empty tubelet"));
    }
    if ptr.is_null() {
        return Err(fail(GtiStatus::NullPointer, "box array is null"));
    }
    std::slice::from_raw_parts(ptr, n).iter().map(to_box).collect()
}

macro_rules! try_status {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(s) => return s,
        }
    };
}

macro_rules! non_null {
    ($($p:ident),+) => {
        $(if $p.is_null() {
            return fail(GtiStatus::NullPointer, concat!(stringify!($p), " is null"));
        })+
    };
}

/// Message describing the last failure on this thread; empty if none.
/// The pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn gti_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gti_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Intersection over union of two boxes.
///
/// # Safety
/// `a`, `b` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn gti_iou(a: *const GtiBox, b: *const GtiBox, out: *mut f64) -> GtiStatus {
    non_null!(a, b, out);
    guard(|| {
        let (a, b) = (try_status!(to_box(&*a)), try_status!(to_box(&*b)));
        *out = geometry::iou(&a, &b);
        GtiStatus::Ok
    })
}

/// Euclidean distance between box centers, in pixels.
///
/// # Safety
/// `a`, `b` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn gti_center_distance(a: *const GtiBox, b: *const GtiBox, out: *mut f64) -> GtiStatus {
    non_null!(a, b, out);
    guard(|| {
        let (a, b) = (try_status!(to_box(&*a)), try_status!(to_box(&*b)));
        *out = geometry::center_distance(&a, &b);
        GtiStatus::Ok
    })
}

/// Smoothed-L1 loss of one prediction.
#[no_mangle]
pub extern "C" fn gti_smoothed_l1(prediction: f64, target: f64) -> f64 {
    rtscore::smoothed_l1(prediction, target)
}

/// Success AUC of a predicted tubelet against ground truth (`n` boxes each).
///
/// # Safety
/// `pred` and `gt` must point to `n` boxes; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn gti_success_auc(pred: *const GtiBox, gt: *const GtiBox, n: usize, out: *mut f64) -> GtiStatus {
    non_null!(out);
    guard(|| {
        let (p, g) = (try_status!(boxes(pred, n)), try_status!(boxes(gt, n)));
        *out = try_status!(evalharness::success_auc(&p, &g).map_err(from_core));
        GtiStatus::Ok
    })
}

/// Fraction of frames whose center distance is at most `threshold` pixels.
///
/// # Safety
/// `pred` and `gt` must point to `n` boxes; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn gti_precision_at(
    pred: *const GtiBox,
    gt: *const GtiBox,
    n: usize,
    threshold: f64,
    out: *mut f64,
) -> GtiStatus {
    non_null!(out);
    guard(|| {
        let (p, g) = (try_status!(boxes(pred, n)), try_status!(boxes(gt, n)));
        *out = try_status!(evalharness::precision_at(&p, &g, threshold).map_err(from_core));
        GtiStatus::Ok
    })
}

/// Loads a trained score model from a JSON file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn gti_model_load(path: *const c_char, out: *mut *mut GtiModel) -> GtiStatus {
    non_null!(out);
    guard(|| {
        let path = try_status!(path_arg(path));
        let model = try_status!(ScoreModel::load(path).map_err(from_core));
        *out = Box::into_raw(Box::new(GtiModel(model)));
        GtiStatus::Ok
    })
}

/// Number of features [`gti_model_predict`] expects.
#[no_mangle]
pub extern "C" fn gti_feature_dim() -> usize {
    FEATURE_DIM
}

/// Predicts RT-scores from `n` grounding features. `r` is 0 when
/// `confidence` is below the 0.5 gate.
///
/// # Safety
/// `model` must come from [`gti_model_load`]; `features` must point to `n`
/// doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn gti_model_predict(
    model: *const GtiModel,
    features: *const f64,
    n: usize,
    confidence: f64,
    out: *mut GtiRtScores,
) -> GtiStatus {
    non_null!(model, features, out);
    guard(|| {
        if n != FEATURE_DIM {
            return fail(GtiStatus::InvalidArgument, format!("expected {FEATURE_DIM} features, got {n}"));
        }
        let mut x = [0.0; FEATURE_DIM];
        x.copy_from_slice(std::slice::from_raw_parts(features, n));
        if x.iter().any(|v| !v.is_finite()) || !confidence.is_finite() {
            return fail(GtiStatus::InvalidArgument, "features and confidence must be finite");
        }
        let s = rtscore::predict(&(*model).0, &GroundingFeatures(x), confidence);
        *out = GtiRtScores { r: s.r, t: s.t };
        GtiStatus::Ok
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from [`gti_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gti_model_free(model: *mut GtiModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Creates a greedy switch controller with decay `lambda` in (0, 1].
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn gti_switch_new(lambda: f64, out: *mut *mut GtiSwitch) -> GtiStatus {
    non_null!(out);
    guard(|| {
        if !(lambda > 0.0 && lambda <= 1.0) {
            return fail(GtiStatus::InvalidArgument, format!("lambda {lambda} outside (0, 1]"));
        }
        *out = Box::into_raw(Box::new(GtiSwitch(SwitchController::new(lambda, 0.0))));
        GtiStatus::Ok
    })
}

/// Feeds one frame's combined score. `*reground` is set when the grounded
/// box should be output and the template re-initialized.
///
/// # Safety
/// `sw` must come from [`gti_switch_new`]; `reground` must be valid.
#[no_mangle]
pub unsafe extern "C" fn gti_switch_step(sw: *mut GtiSwitch, score: f64, reground: *mut bool) -> GtiStatus {
    non_null!(sw, reground);
    guard(|| {
        if !(0.0..=1.0).contains(&score) {
            return fail(GtiStatus::InvalidArgument, format!("score {score} outside [0, 1]"));
        }
        *reground = (*sw).0.step(Some(score));
        GtiStatus::Ok
    })
}

/// Current saved score, or NaN before the first step.
///
/// # Safety
/// `sw` must come from [`gti_switch_new`]; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn gti_switch_saved(sw: *const GtiSwitch, out: *mut f64) -> GtiStatus {
    non_null!(sw, out);
    *out = (*sw).0.saved().unwrap_or(f64::NAN);
    GtiStatus::Ok
}

/// Releases a switch controller. Null is ignored.
///
/// # Safety
/// `sw` must come from [`gti_switch_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gti_switch_free(sw: *mut GtiSwitch) {
    if !sw.is_null() {
        drop(Box::from_raw(sw));
    }
}

/// Opens a JSONL dataset file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn gti_dataset_open(path: *const c_char, out: *mut *mut GtiDataset) -> GtiStatus {
    non_null!(out);
    guard(|| {
        let path = try_status!(path_arg(path));
        let ds = try_status!(read_dataset(path).map_err(from_core));
        let tubelets = ds.videos.iter().map(|_| OnceLock::new()).collect();
        *out = Box::into_raw(Box::new(GtiDataset { videos: ds.videos, tubelets }));
        GtiStatus::Ok
    })
}

/// Number of videos in the dataset.
///
/// # Safety
/// `ds` must come from [`gti_dataset_open`]; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn gti_dataset_len(ds: *const GtiDataset, out: *mut usize) -> GtiStatus {
    non_null!(ds, out);
    *out = (*ds).videos.len();
    GtiStatus::Ok
}

unsafe fn tubelet<'a>(ds: *const GtiDataset, video: usize) -> Result<&'a [BBox], GtiStatus> {
    let ds = &*ds;
    let Some(rec) = ds.videos.get(video) else {
        return Err(fail(GtiStatus::OutOfRange, format!("video index {video} of {}", ds.videos.len())));
    };
    let cell = ds.tubelets[video].get_or_init(|| rec.to_sample().map(|s| s.gt_tubelet).map_err(|e| e.to_string()));
    match cell {
        Ok(t) => Ok(t),
        Err(m) => Err(fail(GtiStatus::Parse, m.clone())),
    }
}

/// Number of frames of video `video` (by position in the file).
///
/// # Safety
/// `ds` must come from [`gti_dataset_open`]; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn gti_dataset_n_frames(ds: *const GtiDataset, video: usize, out: *mut usize) -> GtiStatus {
    non_null!(ds, out);
    guard(|| {
        *out = try_status!(tubelet(ds, video)).len();
        GtiStatus::Ok
    })
}

/// Ground-truth target box of `video` at `frame`.
///
/// # Safety
/// `ds` must come from [`gti_dataset_open`]; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn gti_dataset_gt_box(
    ds: *const GtiDataset,
    video: usize,
    frame: usize,
    out: *mut GtiBox,
) -> GtiStatus {
    non_null!(ds, out);
    guard(|| {
        let t = try_status!(tubelet(ds, video));
        match t.get(frame) {
            Some(b) => {
                *out = from_box(*b);
                GtiStatus::Ok
            }
            None => fail(GtiStatus::OutOfRange, format!("frame {frame} of {}", t.len())),
        }
    })
}

/// Releases a dataset. Null is ignored.
///
/// # Safety
/// `ds` must come from [`gti_dataset_open`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gti_dataset_free(ds: *mut GtiDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}
