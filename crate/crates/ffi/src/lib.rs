//! C ABI over the gaze estimator.
//!
//! Conventions: every fallible call returns a [`GfStatus`]; out-parameters
//! are written only on `GF_STATUS_OK`; handles are opaque and freed with
//! their `_free` function; `gf_last_error_message` retrieves a
//! human-readable description of the most recent failure on this thread.
//! The C header is generated into `include/gazefuse.h` at build time.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use libc::{c_char, c_int};

use gazefuse::config::{GamMode, KvMap, ModelConfig};
use gazefuse::error::Error;
use gazefuse::geom::{angles_to_vector, angular_error_deg, vector_to_angles, GazeAngles, GazeVector};
use gazefuse::tensor::Tensor;
use gazefuse::train::{load_run_estimator, GazeEstimator};

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GfStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    IoError = 3,
    ShapeError = 4,
    RuntimeError = 5,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &Error) -> GfStatus {
    match err {
        Error::Io(_) | Error::MissingPath(_) | Error::BadParamFile(_) => GfStatus::IoError,
        Error::ShapeMismatch { .. } | Error::BadShape { .. } | Error::AxisOutOfRange { .. } => {
            GfStatus::ShapeError
        }
        Error::Config(_) | Error::ConfigLine { .. } | Error::DatasetIdOutOfRange { .. } => {
            GfStatus::InvalidArgument
        }
        _ => GfStatus::RuntimeError,
    }
}

fn fail(err: &Error) -> GfStatus {
    set_error(&err.to_string());
    status_of(err)
}

/// Opaque estimator handle: the fusion model plus its adaptation heads.
pub struct GfEstimator {
    inner: GazeEstimator,
}

fn guarded<F: FnOnce() -> GfStatus>(f: F) -> GfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            GfStatus::RuntimeError
        }
    }
}

/// Crate version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Copies the last error message on this thread into `buf` (truncating)
/// and returns the full message length in bytes, excluding the NUL.
///
/// # Safety
/// `buf` must point to `cap` writable bytes, or be NULL (then only the
/// required length is returned).
#[no_mangle]
pub unsafe extern "C" fn gf_last_error_message(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let msg = slot.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

unsafe fn path_arg<'a>(ptr: *const c_char) -> Result<&'a Path, GfStatus> {
    if ptr.is_null() {
        set_error("path argument is NULL");
        return Err(GfStatus::NullArgument);
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(Path::new(s)),
        Err(_) => {
            set_error("path is not valid UTF-8");
            Err(GfStatus::InvalidArgument)
        }
    }
}

/// Creates a freshly initialized estimator.
///
/// `config_path` may be NULL for the default desk-scale architecture, or
/// name a `key = value` model config file. `num_datasets` sizes the bank
/// of per-dataset correction heads (head 0 is the anchor and is always
/// zero). `seed` drives the deterministic initialization.
///
/// # Safety
/// `config_path` must be NULL or a NUL-terminated string; `out` must be a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gf_estimator_new(
    config_path: *const c_char,
    num_datasets: usize,
    seed: u64,
    out: *mut *mut GfEstimator,
) -> GfStatus {
    guarded(|| {
        if out.is_null() {
            set_error("out handle is NULL");
            return GfStatus::NullArgument;
        }
        let model_cfg = if config_path.is_null() {
            ModelConfig::toy()
        } else {
            let path = match path_arg(config_path) {
                Ok(p) => p,
                Err(s) => return s,
            };
            match KvMap::load(path).and_then(|kv| ModelConfig::from_kv(&kv)) {
                Ok(cfg) => cfg,
                Err(e) => return fail(&e),
            }
        };
        let mut rng = gazefuse::rngs::seeded(seed);
        match GazeEstimator::new(model_cfg, num_datasets.max(1), GamMode::OffsetMlp, &mut rng) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(GfEstimator { inner }));
                GfStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Loads the estimator of a finished training run directory
/// (`run_manifest.txt` + `checkpoint.gzf`).
///
/// # Safety
/// `run_dir` must be a NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn gf_estimator_load(
    run_dir: *const c_char,
    out: *mut *mut GfEstimator,
) -> GfStatus {
    guarded(|| {
        if out.is_null() {
            set_error("out handle is NULL");
            return GfStatus::NullArgument;
        }
        let path = match path_arg(run_dir) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match load_run_estimator(path) {
            Ok((inner, _)) => {
                *out = Box::into_raw(Box::new(GfEstimator { inner }));
                GfStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Frees a handle; NULL is a no-op.
///
/// # Safety
/// `est` must have come from `gf_estimator_new`/`gf_estimator_load` and
/// not already be freed.
#[no_mangle]
pub unsafe extern "C" fn gf_estimator_free(est: *mut GfEstimator) {
    if !est.is_null() {
        drop(Box::from_raw(est));
    }
}

/// Writes the expected square input resolutions (face, eye) in pixels and
/// the channel count.
///
/// # Safety
/// All pointers must be valid or NULL (NULL outputs are skipped).
#[no_mangle]
pub unsafe extern "C" fn gf_estimator_input_sizes(
    est: *const GfEstimator,
    face_size: *mut usize,
    eye_size: *mut usize,
    channels: *mut usize,
) -> GfStatus {
    if est.is_null() {
        set_error("estimator handle is NULL");
        return GfStatus::NullArgument;
    }
    let cfg = &(*est).inner.model.config;
    if !face_size.is_null() {
        *face_size = cfg.face_size;
    }
    if !eye_size.is_null() {
        *eye_size = cfg.eye_size;
    }
    if !channels.is_null() {
        *channels = cfg.in_channels;
    }
    GfStatus::Ok
}

/// Number of trainable parameters (shared estimator plus adaptation heads).
///
/// # Safety
/// `est` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn gf_estimator_param_count(est: *const GfEstimator) -> u64 {
    if est.is_null() {
        return 0;
    }
    (*est).inner.count_total_params() as u64
}

/// Predicts gaze from row-major `f64` image buffers in [0, 1].
///
/// `dataset_id < 0` returns the raw shared-estimator output; `0` routes
/// through the anchor head (identical to raw); positive ids apply that
/// dataset's learned correction. `face` may be NULL for eyes-only
/// topologies (pass `face_len = 0`).
///
/// # Safety
/// Buffers must hold the stated number of doubles; `yaw`/`pitch` must be
/// valid pointers.
#[no_mangle]
pub unsafe extern "C" fn gf_estimator_predict(
    est: *const GfEstimator,
    dataset_id: c_int,
    face: *const f64,
    face_len: usize,
    left: *const f64,
    left_len: usize,
    right: *const f64,
    right_len: usize,
    yaw: *mut f64,
    pitch: *mut f64,
) -> GfStatus {
    guarded(|| {
        if est.is_null() || left.is_null() || right.is_null() || yaw.is_null() || pitch.is_null() {
            set_error("required argument is NULL");
            return GfStatus::NullArgument;
        }
        let inner = &(*est).inner;
        let cfg = &inner.model.config;
        let eye_elems = cfg.eye_size * cfg.eye_size * cfg.in_channels;
        let face_elems = cfg.face_size * cfg.face_size * cfg.in_channels;
        if left_len != eye_elems || right_len != eye_elems {
            set_error(&format!(
                "eye buffers must hold {eye_elems} doubles, got {left_len}/{right_len}"
            ));
            return GfStatus::ShapeError;
        }
        let face_tensor = if face.is_null() {
            None
        } else {
            if face_len != face_elems {
                set_error(&format!(
                    "face buffer must hold {face_elems} doubles, got {face_len}"
                ));
                return GfStatus::ShapeError;
            }
            let data = std::slice::from_raw_parts(face, face_len).to_vec();
            match Tensor::new(vec![cfg.face_size, cfg.face_size, cfg.in_channels], data) {
                Ok(t) => Some(t),
                Err(e) => return fail(&e),
            }
        };
        let eye_tensor = |ptr: *const f64| {
            let data = std::slice::from_raw_parts(ptr, eye_elems).to_vec();
            Tensor::new(vec![cfg.eye_size, cfg.eye_size, cfg.in_channels], data)
        };
        let left_t = match eye_tensor(left) {
            Ok(t) => t,
            Err(e) => return fail(&e),
        };
        let right_t = match eye_tensor(right) {
            Ok(t) => t,
            Err(e) => return fail(&e),
        };
        let routed = if dataset_id < 0 {
            None
        } else {
            Some(dataset_id as usize)
        };
        match inner.predict(routed, face_tensor.as_ref(), &left_t, &right_t) {
            Ok(angles) => {
                *yaw = angles.yaw;
                *pitch = angles.pitch;
                GfStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Converts (yaw, pitch) radians to the unit gaze direction.
///
/// # Safety
/// `x`, `y`, `z` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn gf_angles_to_vector(
    yaw: f64,
    pitch: f64,
    x: *mut f64,
    y: *mut f64,
    z: *mut f64,
) -> GfStatus {
    if x.is_null() || y.is_null() || z.is_null() {
        set_error("output pointer is NULL");
        return GfStatus::NullArgument;
    }
    let v = angles_to_vector(GazeAngles::new(yaw, pitch));
    *x = v.x;
    *y = v.y;
    *z = v.z;
    GfStatus::Ok
}

/// Converts a gaze direction (any nonzero length) to (yaw, pitch) radians.
///
/// # Safety
/// `yaw`, `pitch` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn gf_vector_to_angles(
    x: f64,
    y: f64,
    z: f64,
    yaw: *mut f64,
    pitch: *mut f64,
) -> GfStatus {
    if yaw.is_null() || pitch.is_null() {
        set_error("output pointer is NULL");
        return GfStatus::NullArgument;
    }
    let norm = (x * x + y * y + z * z).sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        set_error("direction vector must be finite and nonzero");
        return GfStatus::InvalidArgument;
    }
    let a = vector_to_angles(GazeVector { x, y, z });
    *yaw = a.yaw;
    *pitch = a.pitch;
    GfStatus::Ok
}

/// Angle between two gaze directions, in degrees (radian inputs).
#[no_mangle]
pub extern "C" fn gf_angular_error_deg(
    yaw_a: f64,
    pitch_a: f64,
    yaw_b: f64,
    pitch_b: f64,
) -> f64 {
    angular_error_deg(GazeAngles::new(yaw_a, pitch_a), GazeAngles::new(yaw_b, pitch_b))
}
