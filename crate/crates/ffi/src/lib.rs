//! C ABI over the `vgsplat` library.
//!
//! Every fallible function returns a [`VgsStatus`]; on failure the message is
//! kept per thread and can be copied out with [`vgs_last_error`]. Models are
//! opaque [`VgsModel`] handles released with [`vgs_model_free`]. Panics are
//! caught at the boundary and reported as `VGS_STATUS_PANIC`.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use nalgebra::{Matrix3, Vector3};
use vgsplat::appearance::hash_index;
use vgsplat::camera::Camera;
use vgsplat::engine::{evaluate, render_view, train, Checkpoint, TrainConfig};
use vgsplat::gradstats::StreamStat;
use vgsplat::io::{load_checkpoint, load_dataset, save_checkpoint};
use vgsplat::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VgsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    NonFinite = 5,
    Diverged = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// Trained model: Gaussians, appearance network and the settings used.
pub struct VgsModel {
    ckpt: Checkpoint,
}

/// Pinhole camera. `w2c_rotation` is row-major.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct VgsCamera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub w2c_rotation: [f64; 9],
    pub w2c_translation: [f64; 3],
}

/// Running statistic of a scalar stream. Zero-initialize before the first
/// update.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct VgsStreamStat {
    pub n: u64,
    pub mean: f64,
    pub var: f64,
    pub m2: f64,
}

/// Variance recursion used by [`vgs_stream_update`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VgsEstimator {
    Paper = 0,
    Exact = 1,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> VgsStatus {
    match e {
        Error::Io { .. } => VgsStatus::Io,
        Error::Parse { .. } | Error::Format(_) => VgsStatus::Format,
        Error::NonFinite(_) => VgsStatus::NonFinite,
        Error::Diverged { .. } => VgsStatus::Diverged,
        _ => VgsStatus::InvalidArgument,
    }
}

struct Fail(VgsStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(VgsStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> VgsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            VgsStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            VgsStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(VgsStatus::InvalidArgument, format!("{what} is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

fn camera_of(c: &VgsCamera) -> Result<Camera, Fail> {
    Ok(Camera::new(
        c.fx,
        c.fy,
        c.cx,
        c.cy,
        c.width as usize,
        c.height as usize,
        Matrix3::from_row_slice(&c.w2c_rotation),
        Vector3::from(c.w2c_translation),
    )?)
}

/// Copies the calling thread's last error message into `buf` (NUL
/// terminated, truncated to fit) and returns the full message length in
/// bytes, excluding the terminator. Pass a null `buf` to query the length.
#[no_mangle]
pub unsafe extern "C" fn vgs_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Loads a checkpoint file. On success `*out` owns a new handle.
#[no_mangle]
pub unsafe extern "C" fn vgs_model_load(path: *const c_char, out: *mut *mut VgsModel) -> VgsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = path_arg(path, "path")?;
        let ckpt = load_checkpoint(&path)?;
        *out = Box::into_raw(Box::new(VgsModel { ckpt }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn vgs_model_save(model: *const VgsModel, path: *const c_char) -> VgsStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let path = path_arg(path, "path")?;
        save_checkpoint(&path, &m.ckpt)?;
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn vgs_model_free(model: *mut VgsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of Gaussians, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn vgs_model_num_gaussians(model: *const VgsModel) -> usize {
    model.as_ref().map_or(0, |m| m.ckpt.gaussians.len())
}

/// Training iterations the model has seen, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn vgs_model_iteration(model: *const VgsModel) -> u64 {
    model.as_ref().map_or(0, |m| m.ckpt.iteration)
}

/// Renders `camera` into `rgb`, `height * width * 3` doubles in row-major
/// pixel order.
#[no_mangle]
pub unsafe extern "C" fn vgs_render(
    model: *const VgsModel,
    camera: *const VgsCamera,
    rgb: *mut f64,
    rgb_len: usize,
) -> VgsStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let c = camera.as_ref().ok_or_else(|| null("camera"))?;
        if rgb.is_null() {
            return Err(null("rgb"));
        }
        let cam = camera_of(c)?;
        let need = cam.width * cam.height * 3;
        if rgb_len < need {
            return Err(Fail(VgsStatus::BufferTooSmall, format!("rgb buffer holds {rgb_len} values, need {need}")));
        }
        let cfg = &m.ckpt.config;
        let img = render_view(&m.ckpt.gaussians, &m.ckpt.appearance, &cam, cfg.background, cfg.parallel)?;
        std::slice::from_raw_parts_mut(rgb, need).copy_from_slice(&img.data);
        Ok(())
    })
}

/// Trains on the dataset in `data_dir`. `config_json` is a flat JSON object
/// of config keys applied over the defaults, or null.
#[no_mangle]
pub unsafe extern "C" fn vgs_train(
    data_dir: *const c_char,
    config_json: *const c_char,
    out: *mut *mut VgsModel,
) -> VgsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let dir = path_arg(data_dir, "data_dir")?;
        let cfg = if config_json.is_null() {
            TrainConfig::default()
        } else {
            let text = CStr::from_ptr(config_json)
                .to_str()
                .map_err(|_| Fail(VgsStatus::InvalidArgument, "config_json is not valid UTF-8".into()))?;
            let v: serde_json::Value = serde_json::from_str(text)
                .map_err(|e| Fail(VgsStatus::Format, format!("config_json: {e}")))?;
            TrainConfig::default().merge_json(&v)?
        };
        let ds = load_dataset(&dir)?;
        let scene = ds.to_scene(cfg.feature_dim, cfg.seed)?;
        let result = train(&scene, &cfg)?;
        *out = Box::into_raw(Box::new(VgsModel { ckpt: result.checkpoint }));
        Ok(())
    })
}

/// Mean PSNR and SSIM over the held-out views of `data_dir`.
#[no_mangle]
pub unsafe extern "C" fn vgs_eval(
    model: *const VgsModel,
    data_dir: *const c_char,
    psnr: *mut f64,
    ssim: *mut f64,
) -> VgsStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if psnr.is_null() || ssim.is_null() {
            return Err(null("psnr/ssim"));
        }
        let dir = path_arg(data_dir, "data_dir")?;
        let (_, test) = load_dataset(&dir)?.split();
        let r = evaluate(&m.ckpt, &test)?;
        *psnr = r.mean_psnr;
        *ssim = r.mean_ssim;
        Ok(())
    })
}

/// Hash-table slot of an integer grid cell for a table of `2^log2_table_size`
/// entries.
#[no_mangle]
pub extern "C" fn vgs_hash_index(x: i32, y: i32, z: i32, log2_table_size: u32) -> u64 {
    hash_index([x, y, z], log2_table_size.min(32)) as u64
}

/// Adds sample `g` to `stat`.
#[no_mangle]
pub unsafe extern "C" fn vgs_stream_update(stat: *mut VgsStreamStat, g: f64, estimator: VgsEstimator) -> VgsStatus {
    guard(|| {
        let s = stat.as_mut().ok_or_else(|| null("stat"))?;
        if !g.is_finite() {
            return Err(Fail(VgsStatus::NonFinite, "streamed sample is not finite".into()));
        }
        let mut st = StreamStat { n: s.n, mean: s.mean, var: s.var, m2: s.m2 };
        match estimator {
            VgsEstimator::Paper => st.update_paper(g),
            VgsEstimator::Exact => st.update_exact(g),
        }
        *s = VgsStreamStat { n: st.n, mean: st.mean, var: st.var, m2: st.m2 };
        Ok(())
    })
}

/// Exact combination of two exact-mode partial statistics.
#[no_mangle]
pub unsafe extern "C" fn vgs_stream_merge(
    a: *const VgsStreamStat,
    b: *const VgsStreamStat,
    out: *mut VgsStreamStat,
) -> VgsStatus {
    guard(|| {
        let (a, b) = (a.as_ref().ok_or_else(|| null("a"))?, b.as_ref().ok_or_else(|| null("b"))?);
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let conv = |s: &VgsStreamStat| StreamStat { n: s.n, mean: s.mean, var: s.var, m2: s.m2 };
        let m = conv(a).merge_exact(&conv(b));
        *out = VgsStreamStat { n: m.n, mean: m.mean, var: m.var, m2: m.m2 };
        Ok(())
    })
}

/// Densification test on per-view averages: `gamma * dbar + grad_norm > tau`.
/// A Gaussian seen in no view never densifies.
#[no_mangle]
pub unsafe extern "C" fn vgs_densify_decision(
    grad_norm: f64,
    dbar: f64,
    view_count: u64,
    gamma: f64,
    tau: f64,
    out: *mut bool,
) -> VgsStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        if ![grad_norm, dbar, gamma, tau].iter().all(|v| v.is_finite()) {
            return Err(Fail(VgsStatus::NonFinite, "densify inputs must be finite".into()));
        }
        *out = view_count > 0 && gamma * dbar + grad_norm > tau;
        Ok(())
    })
}
