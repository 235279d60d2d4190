//! C ABI over `purse-core`.
//!
//! Objects are exposed as opaque handles created by `purse_*_new`/`_load`
//! style constructors and released with the matching `_free`. Every fallible
//! function returns a [`PurseStatus`]; on failure a message is available from
//! [`purse_last_error`] on the same thread.
//!
//! Poses cross the boundary as 12 doubles: the rotation matrix in column-major
//! order followed by the translation.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use nalgebra::{Matrix2, SVector, Vector2, Vector3};
use purse_core::bounds::{worst_case_bound, BoundError, BoundQuery, BoundStatus};
use purse_core::conformal::{
    predict_set, CalibrationRecord, ConformalError, Detection, Heatmap, KeypointLabels,
    NonconformityConfig, NonconformityKind, PredictionSet, Region,
};
use purse_core::geom3d::{CameraIntrinsics, GeomError, ObjectModel, Pose, PoseVector};
use purse_core::purse::{build_purse, ransag, Purse, PurseError};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PurseStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    /// A prediction region or keypoint configuration is degenerate.
    Degenerate = 5,
    /// No pose could be sampled from the PURSE.
    NoSamples = 6,
    Solver = 7,
    Panic = 8,
}

/// Nonconformity function of a calibration record.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PurseScoreKind {
    Peak = 0,
    Cov = 1,
    Pvnet = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PurseIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub skew: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PurseBound {
    /// True when the relaxation proves the PURSE empty; the bounds are then 0.
    pub purse_empty: bool,
    pub d_squared_upper: f64,
    pub d_upper: f64,
    /// Rotation angle bound in degrees for `lambda = 1`, NaN otherwise.
    pub angle_upper_deg: f64,
}

/// Calibration scores with their nonconformity configuration.
pub struct PurseCalibration(CalibrationRecord);

/// One prediction region per keypoint.
pub struct PursePredictionSet(PredictionSet);

/// 3D keypoints of an object.
pub struct PurseModel(ObjectModel);

/// Pose uncertainty set.
pub struct PursePoseSet(Purse);

struct Failure {
    status: PurseStatus,
    message: String,
}

impl Failure {
    fn new(status: PurseStatus, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn null(what: &str) -> Self {
        Self::new(PurseStatus::NullPointer, format!("{what} is null"))
    }
}

impl From<ConformalError> for Failure {
    fn from(e: ConformalError) -> Self {
        let status = match &e {
            ConformalError::Io(_) => PurseStatus::Io,
            ConformalError::SingularCovariance { .. }
            | ConformalError::ZeroPeakProbability { .. }
            | ConformalError::DegenerateInliers { .. }
            | ConformalError::TooFewCandidates(_) => PurseStatus::Degenerate,
            _ => PurseStatus::InvalidArgument,
        };
        Self::new(status, e.to_string())
    }
}

impl From<PurseError> for Failure {
    fn from(e: PurseError) -> Self {
        let status = match &e {
            PurseError::DegenerateRegion { .. }
            | PurseError::NotPositiveDefinite
            | PurseError::TooFewKeypoints(_) => PurseStatus::Degenerate,
            PurseError::NoValidSamples => PurseStatus::NoSamples,
            _ => PurseStatus::InvalidArgument,
        };
        Self::new(status, e.to_string())
    }
}

impl From<BoundError> for Failure {
    fn from(e: BoundError) -> Self {
        let status = match &e {
            BoundError::InvalidLambda(_) | BoundError::NoCandidates => PurseStatus::InvalidArgument,
            BoundError::Purse(_) => PurseStatus::InvalidArgument,
            BoundError::Solver(_) | BoundError::Sdp(_) => PurseStatus::Solver,
        };
        Self::new(status, e.to_string())
    }
}

impl From<GeomError> for Failure {
    fn from(e: GeomError) -> Self {
        Self::new(PurseStatus::InvalidArgument, e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::new(PurseStatus::Io, e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        let status = if e.is_io() { PurseStatus::Io } else { PurseStatus::Parse };
        Self::new(status, e.to_string())
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PurseStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            PurseStatus::Ok
        }
        Ok(Err(fail)) => {
            set_last_error(&fail.message);
            fail.status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(&format!("internal panic: {msg}"));
            PurseStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(Failure::null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn handle<'a, T>(ptr: *const T, what: &str) -> Result<&'a T, Failure> {
    ptr.as_ref().ok_or_else(|| Failure::null(what))
}

unsafe fn out<'a, T>(ptr: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    ptr.as_mut().ok_or_else(|| Failure::null(what))
}

unsafe fn path(ptr: *const c_char) -> Result<PathBuf, Failure> {
    if ptr.is_null() {
        return Err(Failure::null("path"));
    }
    let s = CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| Failure::new(PurseStatus::InvalidArgument, "path is not UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn read_pose(ptr: *const f64) -> Result<Pose, Failure> {
    let s = slice(ptr, 12, "pose")?;
    Ok(PoseVector(SVector::<f64, 12>::from_column_slice(s)).to_pose()?)
}

unsafe fn write_pose(pose: &Pose, ptr: *mut f64) -> Result<(), Failure> {
    if ptr.is_null() {
        return Err(Failure::null("pose output"));
    }
    std::slice::from_raw_parts_mut(ptr, 12).copy_from_slice(PoseVector::from_pose(pose).as_slice());
    Ok(())
}

unsafe fn intrinsics(ptr: *const PurseIntrinsics) -> Result<CameraIntrinsics, Failure> {
    let k = handle(ptr, "intrinsics")?;
    Ok(CameraIntrinsics::new(k.fx, k.fy, k.cx, k.cy, k.skew)?)
}

fn boxed<T>(value: T, dst: &mut *mut T) {
    *dst = Box::into_raw(Box::new(value));
}

unsafe fn free<T>(ptr: *mut T) {
    if !ptr.is_null() {
        drop(Box::from_raw(ptr));
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn purse_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn purse_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Builds a calibration record from `n` nonconformity scores.
///
/// # Safety
/// `scores` must point to `n` doubles and `out_cal` must be writable.
#[no_mangle]
pub unsafe extern "C" fn purse_calibration_from_scores(
    scores: *const f64,
    n: usize,
    kind: PurseScoreKind,
    top_j: usize,
    beta: f64,
    out_cal: *mut *mut PurseCalibration,
) -> PurseStatus {
    guard(|| {
        let dst = out(out_cal, "out_cal")?;
        let scores = slice(scores, n, "scores")?.to_vec();
        let kind = match kind {
            PurseScoreKind::Peak => NonconformityKind::Peak,
            PurseScoreKind::Cov => NonconformityKind::Cov,
            PurseScoreKind::Pvnet => NonconformityKind::Pvnet,
        };
        let config = NonconformityConfig { kind, top_j, beta };
        config.validate()?;
        boxed(PurseCalibration(CalibrationRecord::from_scores(scores, config)?), dst);
        Ok(())
    })
}

/// Reads a calibration record from a JSON file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out_cal` writable.
#[no_mangle]
pub unsafe extern "C" fn purse_calibration_load_json(
    path: *const c_char,
    out_cal: *mut *mut PurseCalibration,
) -> PurseStatus {
    guard(|| {
        let dst = out(out_cal, "out_cal")?;
        let text = std::fs::read_to_string(self::path(path)?)?;
        boxed(PurseCalibration(serde_json::from_str(&text)?), dst);
        Ok(())
    })
}

/// Calibration quantile for miscoverage `epsilon`.
///
/// # Safety
/// `cal` must be a live handle and `out_alpha` writable.
#[no_mangle]
pub unsafe extern "C" fn purse_calibration_quantile(
    cal: *const PurseCalibration,
    epsilon: f64,
    out_alpha: *mut f64,
) -> PurseStatus {
    guard(|| {
        let cal = handle(cal, "calibration")?;
        *out(out_alpha, "out_alpha")? = cal.0.quantile_at(epsilon)?;
        Ok(())
    })
}

/// # Safety
/// `cal` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn purse_calibration_free(cal: *mut PurseCalibration) {
    free(cal)
}

/// Prediction set from explicit regions. `centers` holds `2k` doubles and
/// `shapes` holds `4k` doubles, one row-major 2x2 shape matrix per keypoint.
///
/// # Safety
/// The arrays must have the stated lengths and `out_set` must be writable.
#[no_mangle]
pub unsafe extern "C" fn purse_prediction_set_new(
    centers: *const f64,
    shapes: *const f64,
    k: usize,
    epsilon: f64,
    out_set: *mut *mut PursePredictionSet,
) -> PurseStatus {
    guard(|| {
        let dst = out(out_set, "out_set")?;
        let c = slice(centers, 2 * k, "centers")?;
        let s = slice(shapes, 4 * k, "shapes")?;
        let regions = (0..k)
            .map(|i| Region {
                center: Vector2::new(c[2 * i], c[2 * i + 1]),
                shape: Matrix2::from_row_slice(&s[4 * i..4 * i + 4]),
            })
            .collect();
        boxed(
            PursePredictionSet(PredictionSet {
                regions,
                epsilon,
                quantile: f64::NAN,
            }),
            dst,
        );
        Ok(())
    })
}

/// Calibrated prediction set of a dense heatmap with `channels * height *
/// width` entries, channel-major then row-major.
///
/// # Safety
/// `data` must hold the stated number of doubles; `cal` must be live.
#[no_mangle]
pub unsafe extern "C" fn purse_prediction_set_from_heatmap(
    cal: *const PurseCalibration,
    data: *const f64,
    channels: usize,
    height: usize,
    width: usize,
    epsilon: f64,
    out_set: *mut *mut PursePredictionSet,
) -> PurseStatus {
    guard(|| {
        let dst = out(out_set, "out_set")?;
        let cal = handle(cal, "calibration")?;
        let len = channels
            .checked_mul(height)
            .and_then(|v| v.checked_mul(width))
            .ok_or_else(|| Failure::new(PurseStatus::InvalidArgument, "heatmap size overflows"))?;
        let hm = Heatmap::from_dense(channels, height, width, slice(data, len, "heatmap")?)?;
        boxed(PursePredictionSet(predict_set(&Detection::Heatmap(hm), &cal.0, epsilon)?), dst);
        Ok(())
    })
}

/// Number of keypoint regions in the set.
///
/// # Safety
/// `set` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn purse_prediction_set_len(set: *const PursePredictionSet) -> usize {
    set.as_ref().map_or(0, |s| s.0.len())
}

/// Whether every keypoint pixel in `labels` (`2k` doubles) lies in its region.
///
/// # Safety
/// `labels` must hold `2k` doubles and `out_inside` must be writable.
#[no_mangle]
pub unsafe extern "C" fn purse_prediction_set_contains(
    set: *const PursePredictionSet,
    labels: *const f64,
    k: usize,
    out_inside: *mut bool,
) -> PurseStatus {
    guard(|| {
        let set = handle(set, "prediction set")?;
        if k != set.0.len() {
            return Err(Failure::new(
                PurseStatus::InvalidArgument,
                format!("{k} labels for {} regions", set.0.len()),
            ));
        }
        let y = slice(labels, 2 * k, "labels")?;
        let labels = KeypointLabels::new(y.chunks(2).map(|p| Vector2::new(p[0], p[1])).collect());
        *out(out_inside, "out_inside")? = set.0.contains(&labels);
        Ok(())
    })
}

/// # Safety
/// `set` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn purse_prediction_set_free(set: *mut PursePredictionSet) {
    free(set)
}

/// Object model from `k` keypoints given as `3k` doubles.
///
/// # Safety
/// `points` must hold `3k` doubles and `out_model` must be writable.
#[no_mangle]
pub unsafe extern "C" fn purse_model_new(
    points: *const f64,
    k: usize,
    out_model: *mut *mut PurseModel,
) -> PurseStatus {
    guard(|| {
        let dst = out(out_model, "out_model")?;
        let p = slice(points, 3 * k, "points")?;
        let pts = p.chunks(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect();
        boxed(PurseModel(ObjectModel::new("ffi", pts)?), dst);
        Ok(())
    })
}

/// # Safety
/// `model` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn purse_model_free(model: *mut PurseModel) {
    free(model)
}

/// Builds the PURSE of a prediction set.
///
/// # Safety
/// All handles must be live and `out_purse` writable.
#[no_mangle]
pub unsafe extern "C" fn purse_build(
    set: *const PursePredictionSet,
    model: *const PurseModel,
    intrinsics: *const PurseIntrinsics,
    trans_bound: f64,
    out_purse: *mut *mut PursePoseSet,
) -> PurseStatus {
    guard(|| {
        let dst = out(out_purse, "out_purse")?;
        let set = handle(set, "prediction set")?;
        let model = handle(model, "model")?;
        let k = self::intrinsics(intrinsics)?;
        boxed(PursePoseSet(build_purse(&set.0, &k, &model.0, trans_bound)?), dst);
        Ok(())
    })
}

/// Whether the pose (12 doubles) satisfies every PURSE constraint.
///
/// # Safety
/// `pose` must hold 12 doubles and `out_inside` must be writable.
#[no_mangle]
pub unsafe extern "C" fn purse_contains(
    purse: *const PursePoseSet,
    pose: *const f64,
    out_inside: *mut bool,
) -> PurseStatus {
    guard(|| {
        let purse = handle(purse, "purse")?;
        let pose = read_pose(pose)?;
        *out(out_inside, "out_inside")? = purse.0.contains(&pose);
        Ok(())
    })
}

/// Writes the PURSE as JSON.
///
/// # Safety
/// `purse` must be live and `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn purse_save_json(purse: *const PursePoseSet, path: *const c_char) -> PurseStatus {
    guard(|| {
        let purse = handle(purse, "purse")?;
        let text = serde_json::to_string_pretty(&purse.0)?;
        std::fs::write(self::path(path)?, text)?;
        Ok(())
    })
}

/// Reads a PURSE written by [`purse_save_json`].
///
/// # Safety
/// `path` must be NUL-terminated and `out_purse` writable.
#[no_mangle]
pub unsafe extern "C" fn purse_load_json(path: *const c_char, out_purse: *mut *mut PursePoseSet) -> PurseStatus {
    guard(|| {
        let dst = out(out_purse, "out_purse")?;
        let text = std::fs::read_to_string(self::path(path)?)?;
        boxed(PursePoseSet(serde_json::from_str(&text)?), dst);
        Ok(())
    })
}

/// Averaged pose of RANSAG sampling. `out_fallback` may be NULL.
///
/// # Safety
/// All handles must be live and `out_pose` must hold 12 doubles.
#[no_mangle]
pub unsafe extern "C" fn purse_ransag(
    purse: *const PursePoseSet,
    set: *const PursePredictionSet,
    model: *const PurseModel,
    intrinsics: *const PurseIntrinsics,
    trials: usize,
    seed: u64,
    out_pose: *mut f64,
    out_fallback: *mut bool,
) -> PurseStatus {
    guard(|| {
        let purse = handle(purse, "purse")?;
        let set = handle(set, "prediction set")?;
        let model = handle(model, "model")?;
        let k = self::intrinsics(intrinsics)?;
        let res = ransag(&purse.0, &set.0, &model.0, &k, trials, seed)?;
        write_pose(&res.average, out_pose)?;
        if let Some(fb) = out_fallback.as_mut() {
            *fb = res.fallback_used;
        }
        Ok(())
    })
}

/// Certified upper bound on `λ‖R − R̄‖²_F + (1 − λ)‖t − t̄‖²` over the PURSE.
///
/// # Safety
/// `purse` must be live, `pose` must hold 12 doubles and `out_bound` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn purse_worst_case_bound(
    purse: *const PursePoseSet,
    pose: *const f64,
    lambda: f64,
    out_bound: *mut PurseBound,
) -> PurseStatus {
    guard(|| {
        let purse = handle(purse, "purse")?;
        let pose = read_pose(pose)?;
        let dst = out(out_bound, "out_bound")?;
        let res = worst_case_bound(&BoundQuery::new(purse.0.clone(), pose, lambda)?)?;
        *dst = PurseBound {
            purse_empty: res.status == BoundStatus::PurseEmpty,
            d_squared_upper: res.d_squared_upper,
            d_upper: res.d_upper,
            angle_upper_deg: res.angle_upper_deg().unwrap_or(f64::NAN),
        };
        Ok(())
    })
}

/// # Safety
/// `purse` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn purse_free(purse: *mut PursePoseSet) {
    free(purse)
}
