//! C ABI over the boxedit library.
//!
//! Every fallible call returns a [`BoxeditStatus`]. On failure the message is
//! kept in thread-local storage and can be read with
//! [`boxedit_last_error_message`] until the next failing call on the same
//! thread. Strings handed out by the library must be released with
//! [`boxedit_string_free`]; contexts with [`boxedit_context_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::ptr;

use boxedit::app::EditContext;
use boxedit::denoiser::{Model, ModelConfig};
use boxedit::edit::EditSpec;
use boxedit::geometry::{
    project_box_rect, render_pose_image_with, Box3D, CameraIntrinsics, PoseRenderOptions, ProjectionMode,
    DEFAULT_FACE_GRID, DEFAULT_MAX_DEPTH,
};
use boxedit::scene::Dataset;
use boxedit::train::Checkpoint;
use boxedit::Error;
use serde::Deserialize;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoxeditStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Validation = 3,
    NotFound = 4,
    Geometry = 5,
    Io = 6,
    BufferTooSmall = 7,
    Internal = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub enum BoxeditProjection {
    Depth = 0,
    Edges = 1,
}

/// Pinhole intrinsics in pixels.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct BoxeditIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

/// Box in camera coordinates: centre, `[length, width, height]` in metres
/// and yaw in radians about the camera's vertical axis.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct BoxeditBox {
    pub center: [f64; 3],
    pub size: [f64; 3],
    pub yaw: f64,
}

/// Opaque edit context: a dataset, a model and an object bank.
pub struct BoxeditContext {
    inner: EditContext,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> BoxeditStatus {
    match e {
        Error::Validation { .. }
        | Error::Config(_)
        | Error::Json(_)
        | Error::MissingReference(_)
        | Error::MissingTargetBoxes(_) => BoxeditStatus::Validation,
        Error::UnknownScene(_) | Error::UnknownObject(_) | Error::UnknownBankEntry(_) => BoxeditStatus::NotFound,
        Error::EmptyProjection | Error::NonPositiveDepth(_) | Error::DegenerateGeometry(_) => BoxeditStatus::Geometry,
        Error::Io(_) | Error::Png(_) | Error::Checkpoint(_) => BoxeditStatus::Io,
        _ => BoxeditStatus::Internal,
    }
}

struct Failure(BoxeditStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), format!("{}: {e}", e.code()))
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> BoxeditStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => BoxeditStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside boxedit".into());
            BoxeditStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure(BoxeditStatus::NullArgument, format!("`{name}` is null")))
    } else {
        Ok(())
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    non_null(p, name)?;
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(BoxeditStatus::InvalidUtf8, format!("`{name}` is not UTF-8")))
}

fn to_intrinsics(k: &BoxeditIntrinsics) -> Result<CameraIntrinsics, Failure> {
    let k = CameraIntrinsics {
        fx: k.fx,
        fy: k.fy,
        cx: k.cx,
        cy: k.cy,
        width: k.width as usize,
        height: k.height as usize,
    };
    k.validate()?;
    Ok(k)
}

fn to_box(b: &BoxeditBox) -> Result<Box3D, Failure> {
    if b.size.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::validation("size", "box dimensions must be positive").into());
    }
    let bx = Box3D::from_center_size_yaw(b.center, b.size, b.yaw);
    bx.validate()?;
    Ok(bx)
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn boxedit_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn boxedit_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Writes `[u_min, v_min, u_max, v_max]` of the clipped projection of `bx`.
///
/// # Safety
/// `bx` and `k` must be valid pointers; `out_rect` must hold 4 doubles.
#[no_mangle]
pub unsafe extern "C" fn boxedit_project_box_rect(
    bx: *const BoxeditBox,
    k: *const BoxeditIntrinsics,
    out_rect: *mut f64,
) -> BoxeditStatus {
    guard(|| {
        non_null(bx, "bx")?;
        non_null(k, "k")?;
        non_null(out_rect, "out_rect")?;
        let r = project_box_rect(&to_box(&*bx)?, &to_intrinsics(&*k)?)?;
        std::slice::from_raw_parts_mut(out_rect, 4).copy_from_slice(&[r.u_min, r.v_min, r.u_max, r.v_max]);
        Ok(())
    })
}

/// Renders the six-channel pose image of `bx` into `out`, laid out as
/// `[6, height, width]`. `out_len` must be at least `6 * height * width`.
/// `grid` of 0 selects the default face sampling density.
///
/// # Safety
/// `bx` and `k` must be valid pointers; `out` must hold `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn boxedit_render_pose_image(
    bx: *const BoxeditBox,
    k: *const BoxeditIntrinsics,
    mode: BoxeditProjection,
    grid: u32,
    out: *mut f64,
    out_len: usize,
) -> BoxeditStatus {
    guard(|| {
        non_null(bx, "bx")?;
        non_null(k, "k")?;
        non_null(out, "out")?;
        let k = to_intrinsics(&*k)?;
        let need = 6 * k.height * k.width;
        if out_len < need {
            return Err(Failure(
                BoxeditStatus::BufferTooSmall,
                format!("pose image needs {need} doubles, got {out_len}"),
            ));
        }
        let opts = PoseRenderOptions {
            grid: if grid == 0 { DEFAULT_FACE_GRID } else { grid as usize },
            max_depth: DEFAULT_MAX_DEPTH,
            mode: match mode {
                BoxeditProjection::Depth => ProjectionMode::Depth,
                BoxeditProjection::Edges => ProjectionMode::Edges,
            },
        };
        let img = render_pose_image_with(&to_box(&*bx)?, &k, &opts)?;
        std::slice::from_raw_parts_mut(out, need).copy_from_slice(&img.data);
        Ok(())
    })
}

#[derive(Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ContextConfig {
    dataset: PathBuf,
    checkpoint: Option<PathBuf>,
    model: ModelConfig,
    steps: usize,
    seed: u64,
}

impl Default for ContextConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::from("data"),
            checkpoint: None,
            model: ModelConfig::desk(),
            steps: 12,
            seed: 0,
        }
    }
}

/// Opens a dataset directory and loads or initialises a model.
///
/// `config_json` is an object with optional keys `dataset`, `checkpoint`,
/// `model`, `steps` and `seed`. Without a checkpoint a freshly initialised
/// `model` is used.
///
/// # Safety
/// `config_json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn boxedit_context_open(
    config_json: *const c_char,
    out: *mut *mut BoxeditContext,
) -> BoxeditStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = ptr::null_mut();
        let text = str_arg(config_json, "config_json")?;
        let cfg: ContextConfig =
            serde_json::from_str(text).map_err(|e| Error::validation("config", e.to_string()))?;
        let model = match &cfg.checkpoint {
            Some(p) => Checkpoint::load(p)?.model,
            None => Model::new(cfg.model, cfg.seed)?,
        };
        let inner = EditContext::new(Dataset::open(&cfg.dataset)?, model, cfg.steps, cfg.seed)?;
        *out = Box::into_raw(Box::new(BoxeditContext { inner }));
        Ok(())
    })
}

/// Releases a context. Null is ignored.
///
/// # Safety
/// `ctx` must come from [`boxedit_context_open`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn boxedit_context_free(ctx: *mut BoxeditContext) {
    if !ctx.is_null() {
        drop(Box::from_raw(ctx));
    }
}

/// Runs one edit given as EditSpec JSON. When `out_dir` is non-null the
/// frames and report are written there. The report JSON is returned in
/// `out_report` and must be released with [`boxedit_string_free`].
///
/// # Safety
/// `ctx` must be a live context, strings NUL-terminated and `out_report` a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn boxedit_context_run_edit(
    ctx: *const BoxeditContext,
    spec_json: *const c_char,
    out_dir: *const c_char,
    out_report: *mut *mut c_char,
) -> BoxeditStatus {
    guard(|| {
        non_null(ctx, "ctx")?;
        non_null(out_report, "out_report")?;
        *out_report = ptr::null_mut();
        let spec: EditSpec = serde_json::from_str(str_arg(spec_json, "spec_json")?)
            .map_err(|e| Error::validation("spec", e.to_string()))?;
        let outcome = (*ctx).inner.run(&spec)?;
        if !out_dir.is_null() {
            outcome.write(Path::new(str_arg(out_dir, "out_dir")?))?;
        }
        let report = serde_json::to_string(&outcome.report).map_err(Error::from)?;
        *out_report = CString::new(report).expect("JSON has no NUL").into_raw();
        Ok(())
    })
}

/// Releases a string returned by the library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn boxedit_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
