//! C bindings.
//!
//! Every function returns an [`AmStatus`]; on failure a message for the
//! calling thread is available from [`am_last_error`]. Handles are opaque and
//! must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::slice;

use artmarks::evaluation::mean_error;
use artmarks::geometry::{fit_similarity, ransac_similarity, RansacConfig, SimilarityTransform, TpsField};
use artmarks::heatmap::{spatial_softargmax, HeatmapStack};
use artmarks::landmarks::{read_landmarks, LandmarkSet, Point, PtsConvention, ReadOptions, NUM_LANDMARKS};
use artmarks::model::ModelBundle;
use artmarks::raster::Image;

/// Number of landmarks in every landmark array.
pub const AM_NUM_LANDMARKS: usize = 68;

const _: () = assert!(AM_NUM_LANDMARKS == NUM_LANDMARKS);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Malformed = 4,
    Degenerate = 5,
    RegistrationFailed = 6,
    Model = 7,
    Panic = 8,
    Internal = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AmPoint {
    pub x: f64,
    pub y: f64,
}

/// `dst = scale * R(angle) * src + (tx, ty)`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AmSimilarity {
    pub angle: f64,
    pub scale: f64,
    pub tx: f64,
    pub ty: f64,
}

/// Loaded model bundle.
pub struct AmDetector {
    bundle: ModelBundle,
}

/// Fitted thin-plate spline.
pub struct AmTps {
    field: TpsField,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(AmStatus, String);

impl From<artmarks::Error> for Failure {
    fn from(e: artmarks::Error) -> Self {
        let status = match e.kind() {
            "io" | "image" => AmStatus::Io,
            "malformed" | "json" | "csv" => AmStatus::Malformed,
            "degenerate" => AmStatus::Degenerate,
            "registration_failed" => AmStatus::RegistrationFailed,
            "model" | "tensor" => AmStatus::Model,
            "internal" => AmStatus::Internal,
            _ => AmStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(AmStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> AmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            AmStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("panic: {msg}"));
            AmStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure(AmStatus::NullPointer, format!("{name} is null")))
    } else {
        Ok(())
    }
}

unsafe fn points<'a>(p: *const AmPoint, n: usize, name: &str) -> Result<&'a [AmPoint], Failure> {
    non_null(p, name)?;
    Ok(slice::from_raw_parts(p, n))
}

fn to_points(ps: &[AmPoint]) -> Vec<Point> {
    ps.iter().map(|p| Point::new(p.x, p.y)).collect()
}

unsafe fn write_points(out: *mut AmPoint, ps: &[Point]) {
    for (i, p) in ps.iter().enumerate() {
        *out.add(i) = AmPoint { x: p.x, y: p.y };
    }
}

unsafe fn path_arg(p: *const c_char, name: &str) -> Result<PathBuf, Failure> {
    non_null(p, name)?;
    let s = CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("{name} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

fn similarity_out(t: &SimilarityTransform) -> AmSimilarity {
    AmSimilarity {
        angle: t.angle,
        scale: t.scale,
        tx: t.tx,
        ty: t.ty,
    }
}

/// Message of the last failure on this thread; empty after a success. The
/// pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn am_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn am_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Load a model bundle directory.
///
/// # Safety
/// `dir` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn am_detector_load(dir: *const c_char, out: *mut *mut AmDetector) -> AmStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = std::ptr::null_mut();
        let bundle = ModelBundle::load(&path_arg(dir, "dir")?)?;
        *out = Box::into_raw(Box::new(AmDetector { bundle }));
        Ok(())
    })
}

/// Release a detector. Null is ignored.
///
/// # Safety
/// `detector` must come from [`am_detector_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn am_detector_free(detector: *mut AmDetector) {
    if !detector.is_null() {
        drop(Box::from_raw(detector));
    }
}

/// Predict landmarks for an interleaved 8-bit RGB image of `width * height`
/// pixels with rows `stride` bytes apart. `out_refined` receives the final
/// 68 points; `out_global` (nullable) the coarse estimate.
///
/// # Safety
/// `rgb` must hold `stride * height` bytes and the outputs 68 points each.
#[no_mangle]
pub unsafe extern "C" fn am_detector_predict(
    detector: *const AmDetector,
    rgb: *const u8,
    width: u32,
    height: u32,
    stride: usize,
    out_refined: *mut AmPoint,
    out_global: *mut AmPoint,
) -> AmStatus {
    guard(|| {
        non_null(detector, "detector")?;
        non_null(rgb, "rgb")?;
        non_null(out_refined, "out_refined")?;
        let (w, h) = (width as usize, height as usize);
        if w == 0 || h == 0 || stride < 3 * w {
            return Err(invalid(format!("bad image layout {width}x{height}, stride {stride}")));
        }
        let bytes = slice::from_raw_parts(rgb, stride * (h - 1) + 3 * w);
        let mut data = vec![0f32; 3 * w * h];
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    data[(c * h + y) * w + x] = bytes[y * stride + 3 * x + c] as f32 / 255.0;
                }
            }
        }
        let image = Image::from_planes(w, h, 3, data)?;
        let pred = (*detector).bundle.detector().forward_full(&image)?;
        write_points(out_refined, pred.refined.points());
        if !out_global.is_null() {
            write_points(out_global, pred.global.points());
        }
        Ok(())
    })
}

/// Expected grid coordinates under a per-channel softmax of
/// `temperature * heatmaps`. Heatmaps are `channels x height x width`,
/// row-major; cell (row i, column j) is the point (j, i).
///
/// # Safety
/// `heatmaps` must hold `channels * height * width` values and `out`
/// `channels` points.
#[no_mangle]
pub unsafe extern "C" fn am_softargmax(
    heatmaps: *const f64,
    channels: usize,
    height: usize,
    width: usize,
    temperature: f64,
    out: *mut AmPoint,
) -> AmStatus {
    guard(|| {
        non_null(heatmaps, "heatmaps")?;
        non_null(out, "out")?;
        let n = channels
            .checked_mul(height)
            .and_then(|v| v.checked_mul(width))
            .ok_or_else(|| invalid("heatmap size overflows"))?;
        let stack = HeatmapStack::new(channels, height, width, slice::from_raw_parts(heatmaps, n).to_vec())?;
        write_points(out, &spatial_softargmax(&stack, temperature)?);
        Ok(())
    })
}

/// Least-squares similarity mapping `src` onto `dst`.
///
/// # Safety
/// `src` and `dst` must hold `n` points; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn am_fit_similarity(
    src: *const AmPoint,
    dst: *const AmPoint,
    n: usize,
    out: *mut AmSimilarity,
) -> AmStatus {
    guard(|| {
        non_null(out, "out")?;
        let t = fit_similarity(&to_points(points(src, n, "src")?), &to_points(points(dst, n, "dst")?))?;
        *out = similarity_out(&t);
        Ok(())
    })
}

/// Robust similarity fit. `inlier_mask` (nullable) receives `n` flags and
/// `num_inliers` (nullable) their count.
///
/// # Safety
/// `src` and `dst` must hold `n` points, `inlier_mask` `n` bytes if non-null.
#[no_mangle]
pub unsafe extern "C" fn am_ransac_similarity(
    src: *const AmPoint,
    dst: *const AmPoint,
    n: usize,
    threshold_px: f64,
    max_trials: usize,
    min_inliers: usize,
    seed: u64,
    out: *mut AmSimilarity,
    inlier_mask: *mut u8,
    num_inliers: *mut usize,
) -> AmStatus {
    guard(|| {
        non_null(out, "out")?;
        let cfg = RansacConfig {
            threshold_px,
            max_trials,
            min_inliers,
            seed,
        };
        let r = ransac_similarity(&to_points(points(src, n, "src")?), &to_points(points(dst, n, "dst")?), &cfg)?;
        *out = similarity_out(&r.transform);
        if !inlier_mask.is_null() {
            for (i, &m) in r.inlier_mask.iter().enumerate() {
                *inlier_mask.add(i) = m as u8;
            }
        }
        if !num_inliers.is_null() {
            *num_inliers = r.num_inliers();
        }
        Ok(())
    })
}

/// Mean Euclidean distance between two 68-point sets over `subset`
/// (`subset_len` indices), or over all 68 points when `subset` is null.
///
/// # Safety
/// `pred` and `gt` must hold 68 points, `subset` `subset_len` indices.
#[no_mangle]
pub unsafe extern "C" fn am_mean_error(
    pred: *const AmPoint,
    gt: *const AmPoint,
    subset: *const usize,
    subset_len: usize,
    out: *mut f64,
) -> AmStatus {
    guard(|| {
        non_null(out, "out")?;
        let set = |p, name| -> Result<LandmarkSet, Failure> {
            Ok(LandmarkSet::new(to_points(points(p, AM_NUM_LANDMARKS, name)?), 1, 1)?)
        };
        let (p, g) = (set(pred, "pred")?, set(gt, "gt")?);
        let all: Vec<usize> = (0..AM_NUM_LANDMARKS).collect();
        let idx = if subset.is_null() { &all[..] } else { slice::from_raw_parts(subset, subset_len) };
        *out = mean_error(&p, &g, idx)?;
        Ok(())
    })
}

/// Read a `.pts` or JSON landmark file into 68 zero-based pixel points.
/// `.pts` coordinates are treated as one-based when `one_based` is true.
/// `image_width`/`image_height` give the frame of `.pts` files (0 probes a
/// sibling image); the frame used is written to the nullable size outputs.
///
/// # Safety
/// `path` must be NUL-terminated and `out` hold 68 points.
#[no_mangle]
pub unsafe extern "C" fn am_read_landmarks(
    path: *const c_char,
    one_based: bool,
    image_width: u32,
    image_height: u32,
    out: *mut AmPoint,
    out_width: *mut u32,
    out_height: *mut u32,
) -> AmStatus {
    guard(|| {
        non_null(out, "out")?;
        let opts = ReadOptions {
            pts_convention: if one_based { PtsConvention::OneBased } else { PtsConvention::ZeroBased },
            image_size: (image_width > 0 && image_height > 0).then_some((image_width, image_height)),
        };
        let set = read_landmarks(&path_arg(path, "path")?, &opts)?;
        write_points(out, set.points());
        if !out_width.is_null() {
            *out_width = set.width();
        }
        if !out_height.is_null() {
            *out_height = set.height();
        }
        Ok(())
    })
}

/// Fit a thin-plate spline taking `src` control points to `dst`.
///
/// # Safety
/// `src` and `dst` must hold `n` points; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn am_tps_fit(
    src: *const AmPoint,
    dst: *const AmPoint,
    n: usize,
    regularization: f64,
    out: *mut *mut AmTps,
) -> AmStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = std::ptr::null_mut();
        let field = TpsField::fit(
            &to_points(points(src, n, "src")?),
            &to_points(points(dst, n, "dst")?),
            regularization,
        )?;
        *out = Box::into_raw(Box::new(AmTps { field }));
        Ok(())
    })
}

/// Map `n` points through a fitted spline.
///
/// # Safety
/// `input` and `output` must hold `n` points (they may alias).
#[no_mangle]
pub unsafe extern "C" fn am_tps_eval(tps: *const AmTps, input: *const AmPoint, n: usize, output: *mut AmPoint) -> AmStatus {
    guard(|| {
        non_null(tps, "tps")?;
        non_null(output, "output")?;
        let mapped: Vec<Point> = to_points(points(input, n, "input")?)
            .into_iter()
            .map(|p| (*tps).field.map(p))
            .collect();
        write_points(output, &mapped);
        Ok(())
    })
}

/// Release a spline. Null is ignored.
///
/// # Safety
/// `tps` must come from [`am_tps_fit`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn am_tps_free(tps: *mut AmTps) {
    if !tps.is_null() {
        drop(Box::from_raw(tps));
    }
}
