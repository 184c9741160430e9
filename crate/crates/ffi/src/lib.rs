//! C ABI over the simtune geometry, statics and sampling routines.
//!
//! Objects cross the boundary as opaque handles created by a `*_new` or
//! `*_load` function and released by the matching `*_free`. Every fallible
//! call returns a [`SimtuneStatus`]; on failure the message is available
//! from [`simtune_last_error`] on the same thread until the next call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use simtune::evalkit::shape_fidelity;
use simtune::flow::{sample, GuidanceConfig};
use simtune::geometry::{decode_shape, Polygon2D, ShapeLatent, Vec2};
use simtune::physics::{flat_cut, settle, SimConfig};
use simtune::seed::derive_seed;
use simtune::tensor::ModelCheckpoint;
use simtune::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SimtuneStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidInput = 2,
    Numeric = 3,
    Geometry = 4,
    Config = 5,
    Corruption = 6,
    Version = 7,
    Io = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

/// A simple polygon with uniform density.
pub struct SimtunePolygon(Polygon2D);

/// A model with its optional adapter, as loaded from a checkpoint file.
pub struct SimtuneCheckpoint(ModelCheckpoint);

/// Result of settling a polygon on flat ground.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SimtuneSettleResult {
    pub tilt_deg: f64,
    pub stable: bool,
    pub settled: bool,
    pub topple_count: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> SimtuneStatus {
    match e {
        Error::Input(_) => SimtuneStatus::InvalidInput,
        Error::Numeric(_) => SimtuneStatus::Numeric,
        Error::Geometry(_) => SimtuneStatus::Geometry,
        Error::Config(_) => SimtuneStatus::Config,
        Error::Corruption(_) => SimtuneStatus::Corruption,
        Error::Version { .. } => SimtuneStatus::Version,
        Error::Io(_) => SimtuneStatus::Io,
    }
}

enum Fail {
    Null(&'static str),
    Lib(Error),
    Small(usize),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SimtuneStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SimtuneStatus::Ok,
        Ok(Err(Fail::Null(name))) => {
            set_error(format!("null pointer for `{name}`"));
            SimtuneStatus::NullArgument
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Fail::Small(need))) => {
            set_error(format!("output buffer too small; need {need} values"));
            SimtuneStatus::BufferTooSmall
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            SimtuneStatus::Panic
        }
    }
}

unsafe fn slice<'a>(ptr: *const f64, len: usize, name: &'static str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(Fail::Null(name));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn out<'a, T>(ptr: *mut T, name: &'static str) -> Result<&'a mut T, Fail> {
    ptr.as_mut().ok_or(Fail::Null(name))
}

unsafe fn handle<'a, T>(ptr: *const T, name: &'static str) -> Result<&'a T, Fail> {
    ptr.as_ref().ok_or(Fail::Null(name))
}

unsafe fn string<'a>(ptr: *const c_char, name: &'static str) -> Result<&'a str, Fail> {
    if ptr.is_null() {
        return Err(Fail::Null(name));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| Fail::Lib(Error::Input(format!("`{name}` is not valid UTF-8"))))
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next simtune call on the same thread.
#[no_mangle]
pub extern "C" fn simtune_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn simtune_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Stage seed derived from a master seed and a NUL-terminated label.
///
/// # Safety
/// `label` must be a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn simtune_derive_seed(master: u64, label: *const c_char, out_seed: *mut u64) -> SimtuneStatus {
    guard(|| {
        let l = string(label, "label")?;
        *out(out_seed, "out_seed")? = derive_seed(master, l);
        Ok(())
    })
}

/// Polygon from `n` interleaved `x, y` pairs.
///
/// # Safety
/// `xy` must point to `2 * n` doubles; `out_polygon` must be writable.
#[no_mangle]
pub unsafe extern "C" fn simtune_polygon_new(xy: *const f64, n: usize, out_polygon: *mut *mut SimtunePolygon) -> SimtuneStatus {
    guard(|| {
        let o = out(out_polygon, "out_polygon")?;
        let v = slice(xy, 2 * n, "xy")?;
        let verts = v.chunks_exact(2).map(|c| Vec2::new(c[0], c[1])).collect();
        *o = Box::into_raw(Box::new(SimtunePolygon(Polygon2D::new(verts)?)));
        Ok(())
    })
}

/// Star-shaped polygon decoded from a latent of `k` raw radii.
///
/// # Safety
/// `latent` must point to `k` doubles; `out_polygon` must be writable.
#[no_mangle]
pub unsafe extern "C" fn simtune_polygon_decode(
    latent: *const f64,
    k: usize,
    r_min: f64,
    out_polygon: *mut *mut SimtunePolygon,
) -> SimtuneStatus {
    guard(|| {
        let o = out(out_polygon, "out_polygon")?;
        let z = ShapeLatent::new(slice(latent, k, "latent")?.to_vec());
        *o = Box::into_raw(Box::new(SimtunePolygon(decode_shape(&z, k, r_min)?)));
        Ok(())
    })
}

/// Releases a polygon; NULL is ignored.
///
/// # Safety
/// `polygon` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn simtune_polygon_free(polygon: *mut SimtunePolygon) {
    if !polygon.is_null() {
        drop(Box::from_raw(polygon));
    }
}

/// Number of vertices.
///
/// # Safety
/// `polygon` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn simtune_polygon_len(polygon: *const SimtunePolygon, out_len: *mut usize) -> SimtuneStatus {
    guard(|| {
        *out(out_len, "out_len")? = handle(polygon, "polygon")?.0.len();
        Ok(())
    })
}

/// Copies the vertices as interleaved `x, y` into `xy`, which holds
/// `capacity` doubles.
///
/// # Safety
/// `polygon` must be a live handle and `xy` must hold `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn simtune_polygon_vertices(polygon: *const SimtunePolygon, xy: *mut f64, capacity: usize) -> SimtuneStatus {
    guard(|| {
        let p = &handle(polygon, "polygon")?.0;
        let need = 2 * p.len();
        if capacity < need {
            return Err(Fail::Small(need));
        }
        if xy.is_null() {
            return Err(Fail::Null("xy"));
        }
        let dst = std::slice::from_raw_parts_mut(xy, need);
        for (i, v) in p.vertices().iter().enumerate() {
            dst[2 * i] = v.x;
            dst[2 * i + 1] = v.y;
        }
        Ok(())
    })
}

/// Area and centre of mass.
///
/// # Safety
/// `polygon` must be a live handle; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn simtune_polygon_mass_properties(
    polygon: *const SimtunePolygon,
    out_area: *mut f64,
    out_cx: *mut f64,
    out_cy: *mut f64,
) -> SimtuneStatus {
    guard(|| {
        let (c, a) = handle(polygon, "polygon")?.0.centroid_area()?;
        *out(out_area, "out_area")? = a;
        *out(out_cx, "out_cx")? = c.x;
        *out(out_cy, "out_cy")? = c.y;
        Ok(())
    })
}

/// Settles the polygon on flat ground from an initial rotation (radians),
/// using the default simulator settings with the given tilt cutoff.
///
/// # Safety
/// `polygon` must be a live handle; `out_result` must be writable.
#[no_mangle]
pub unsafe extern "C" fn simtune_settle(
    polygon: *const SimtunePolygon,
    initial_rotation: f64,
    cutoff_deg: f64,
    out_result: *mut SimtuneSettleResult,
) -> SimtuneStatus {
    guard(|| {
        let p = &handle(polygon, "polygon")?.0;
        let o = out(out_result, "out_result")?;
        let cfg = SimConfig {
            cutoff_deg,
            ..SimConfig::default()
        };
        cfg.validate()?;
        let r = settle(p, initial_rotation, &cfg)?;
        *o = SimtuneSettleResult {
            tilt_deg: r.tilt_deg,
            stable: r.stable,
            settled: r.settled,
            topple_count: r.topple_count,
        };
        Ok(())
    })
}

/// New polygon with everything below `min_y + z` removed.
///
/// # Safety
/// `polygon` must be a live handle; `out_polygon` must be writable.
#[no_mangle]
pub unsafe extern "C" fn simtune_flat_cut(polygon: *const SimtunePolygon, z: f64, out_polygon: *mut *mut SimtunePolygon) -> SimtuneStatus {
    guard(|| {
        let p = &handle(polygon, "polygon")?.0;
        let o = out(out_polygon, "out_polygon")?;
        *o = Box::into_raw(Box::new(SimtunePolygon(flat_cut(p, z)?)));
        Ok(())
    })
}

/// Chamfer distance and F-score (0 to 100) of `sample` against `reference`
/// after unit-box normalization and ICP.
///
/// # Safety
/// Both polygons must be live handles; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn simtune_shape_fidelity(
    sample: *const SimtunePolygon,
    reference: *const SimtunePolygon,
    n_points: usize,
    tau: f64,
    seed: u64,
    out_cd: *mut f64,
    out_fscore: *mut f64,
) -> SimtuneStatus {
    guard(|| {
        let a = &handle(sample, "sample")?.0;
        let b = &handle(reference, "reference")?.0;
        let (cd, fs) = shape_fidelity(a, b, n_points, tau, seed)?;
        *out(out_cd, "out_cd")? = cd;
        *out(out_fscore, "out_fscore")? = fs;
        Ok(())
    })
}

/// Loads and verifies a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out_checkpoint` must be writable.
#[no_mangle]
pub unsafe extern "C" fn simtune_checkpoint_load(path: *const c_char, out_checkpoint: *mut *mut SimtuneCheckpoint) -> SimtuneStatus {
    guard(|| {
        let o = out(out_checkpoint, "out_checkpoint")?;
        let p = string(path, "path")?;
        *o = Box::into_raw(Box::new(SimtuneCheckpoint(ModelCheckpoint::load(Path::new(p))?)));
        Ok(())
    })
}

/// Releases a checkpoint; NULL is ignored.
///
/// # Safety
/// `checkpoint` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn simtune_checkpoint_free(checkpoint: *mut SimtuneCheckpoint) {
    if !checkpoint.is_null() {
        drop(Box::from_raw(checkpoint));
    }
}

/// Content hash and latent / condition widths.
///
/// # Safety
/// `checkpoint` must be a live handle; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn simtune_checkpoint_info(
    checkpoint: *const SimtuneCheckpoint,
    out_hash: *mut u64,
    out_latent_dim: *mut usize,
    out_cond_dim: *mut usize,
) -> SimtuneStatus {
    guard(|| {
        let ck = &handle(checkpoint, "checkpoint")?.0;
        *out(out_hash, "out_hash")? = ck.content_hash()?;
        *out(out_latent_dim, "out_latent_dim")? = ck.model.latent_dim();
        *out(out_cond_dim, "out_cond_dim")? = ck.model.cond_dim();
        Ok(())
    })
}

/// Draws one latent for a condition by Euler integration over `steps`
/// steps, guidance scale 1. `out_valid` is false when the sample is not
/// finite.
///
/// # Safety
/// `checkpoint` must be a live handle, `cond` must hold `cond_len` doubles,
/// `out_latent` must hold `latent_capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn simtune_checkpoint_sample(
    checkpoint: *const SimtuneCheckpoint,
    cond: *const f64,
    cond_len: usize,
    steps: usize,
    seed: u64,
    out_latent: *mut f64,
    latent_capacity: usize,
    out_valid: *mut bool,
) -> SimtuneStatus {
    guard(|| {
        let ck = &handle(checkpoint, "checkpoint")?.0;
        let c = slice(cond, cond_len, "cond")?;
        if cond_len != ck.model.cond_dim() {
            return Err(Fail::Lib(Error::Input(format!(
                "condition has {cond_len} values, model expects {}",
                ck.model.cond_dim()
            ))));
        }
        let d = ck.model.latent_dim();
        if latent_capacity < d {
            return Err(Fail::Small(d));
        }
        if out_latent.is_null() {
            return Err(Fail::Null("out_latent"));
        }
        let valid = out(out_valid, "out_valid")?;
        let s = sample(&ck.model, ck.adapter.as_ref(), c, steps, &GuidanceConfig::default(), seed)?;
        std::slice::from_raw_parts_mut(out_latent, d).copy_from_slice(&s.latent.values);
        *valid = s.valid;
        Ok(())
    })
}
