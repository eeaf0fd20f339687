//! C ABI over `hmlabel`.
//!
//! Objects are opaque handles created by `hm_*_new`/`hm_*_generate` and
//! released with the matching `hm_*_free`. Every fallible call returns an
//! [`HmStatus`]; on failure a message is kept per thread and can be fetched
//! with [`hm_last_error_message`]. Handles are not thread-safe; use one per
//! thread or serialize access.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use hmlabel::eval::{mean_iou, run_comparison, write_comparison_outputs, ExperimentConfig, Prepared};
use hmlabel::fusion::{decay_g, fuse_height, fuse_semantic, DecayModel};
use hmlabel::grid::HeightField;
use hmlabel::labellers::LabelDistributionImage;
use hmlabel::mapseg::{plan_tiles, receptive_field, ConvLayer, ConvSpec};
use hmlabel::raster::Raster;
use hmlabel::render::{CameraPose, Intrinsics, NO_LABEL};
use hmlabel::scene::{generate_scene, Scene};
use hmlabel::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Internal = 5,
}

/// Pinhole camera intrinsics.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct HmIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

/// Generated scene.
pub struct HmScene(Scene);

/// Height field with per-vertex class posteriors.
pub struct HmField(HeightField);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> HmStatus {
    match e {
        Error::Io(_) => HmStatus::Io,
        Error::Parse(_) | Error::Json(_) => HmStatus::Parse,
        _ => HmStatus::InvalidArgument,
    }
}

/// Runs `f`, translating errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), HmStatus>) -> HmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HmStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic".into());
            HmStatus::Internal
        }
    }
}

trait OrStatus<T> {
    fn or_status(self) -> Result<T, HmStatus>;
}

impl<T> OrStatus<T> for hmlabel::Result<T> {
    fn or_status(self) -> Result<T, HmStatus> {
        self.map_err(|e| {
            set_error(e.to_string());
            status_of(&e)
        })
    }
}

fn null_check<T>(p: *const T, name: &str) -> Result<(), HmStatus> {
    if p.is_null() {
        set_error(format!("{name} is null"));
        Err(HmStatus::NullPointer)
    } else {
        Ok(())
    }
}

fn invalid(msg: impl Into<String>) -> HmStatus {
    set_error(msg.into());
    HmStatus::InvalidArgument
}

unsafe fn c_str<'a>(p: *const c_char, name: &str) -> Result<&'a str, HmStatus> {
    null_check(p, name)?;
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{name} is not valid UTF-8")))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `len - 1` bytes). Returns the full message length in bytes,
/// or 0 when there is no message.
#[no_mangle]
pub unsafe extern "C" fn hm_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else {
            return 0;
        };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Measurement likelihood of class `measured` at distance `distance` from a
/// vertex of class `vertex`.
#[no_mangle]
pub unsafe extern "C" fn hm_decay_likelihood(
    measured: u8,
    vertex: u8,
    distance: f64,
    alpha: f64,
    num_classes: usize,
    out: *mut f64,
) -> HmStatus {
    guard(|| {
        null_check(out, "out")?;
        if measured as usize >= num_classes || vertex as usize >= num_classes || !(distance >= 0.0) {
            return Err(invalid("classes must be < num_classes and distance >= 0"));
        }
        let model = DecayModel::new(alpha, num_classes).or_status()?;
        *out = decay_g(measured, vertex, distance, &model);
        Ok(())
    })
}

/// Theoretical receptive field of a stack of square conv layers.
#[no_mangle]
pub unsafe extern "C" fn hm_receptive_field(
    kernels: *const usize,
    strides: *const usize,
    dilations: *const usize,
    num_layers: usize,
    out: *mut usize,
) -> HmStatus {
    guard(|| {
        null_check(kernels, "kernels")?;
        null_check(strides, "strides")?;
        null_check(dilations, "dilations")?;
        null_check(out, "out")?;
        let k = slice::from_raw_parts(kernels, num_layers);
        let s = slice::from_raw_parts(strides, num_layers);
        let d = slice::from_raw_parts(dilations, num_layers);
        let layers = (0..num_layers).map(|i| ConvLayer::square(k[i], s[i], d[i])).collect();
        let spec = ConvSpec::new(layers).or_status()?;
        *out = receptive_field(&spec).0;
        Ok(())
    })
}

/// Sliding-window offsets and window count for a map.
#[no_mangle]
pub unsafe extern "C" fn hm_plan_tiles(
    map_width: usize,
    map_height: usize,
    window_width: usize,
    window_height: usize,
    rf_x: usize,
    rf_y: usize,
    out_offset_x: *mut usize,
    out_offset_y: *mut usize,
    out_num_tiles: *mut usize,
) -> HmStatus {
    guard(|| {
        null_check(out_offset_x, "out_offset_x")?;
        null_check(out_offset_y, "out_offset_y")?;
        null_check(out_num_tiles, "out_num_tiles")?;
        let plan = plan_tiles((map_width, map_height), (window_width, window_height), (rf_x, rf_y)).or_status()?;
        *out_offset_x = plan.offset.0;
        *out_offset_y = plan.offset.1;
        *out_num_tiles = plan.tiles.len();
        Ok(())
    })
}

/// Mean IoU of two label arrays of length `len`; ground truth equal to
/// `ignore` is skipped.
#[no_mangle]
pub unsafe extern "C" fn hm_mean_iou(
    pred: *const u8,
    gt: *const u8,
    len: usize,
    ignore: u8,
    out: *mut f64,
) -> HmStatus {
    guard(|| {
        null_check(pred, "pred")?;
        null_check(gt, "gt")?;
        null_check(out, "out")?;
        let p = Raster::from_vec(len, 1, slice::from_raw_parts(pred, len).to_vec()).or_status()?;
        let g = Raster::from_vec(len, 1, slice::from_raw_parts(gt, len).to_vec()).or_status()?;
        *out = mean_iou(&p, &g, ignore).or_status()?.mean;
        Ok(())
    })
}

/// Generates a scene with `counts[0..3]` objects per class.
#[no_mangle]
pub unsafe extern "C" fn hm_scene_generate(
    extent: f64,
    resolution: f64,
    counts: *const usize,
    seed: u64,
    out: *mut *mut HmScene,
) -> HmStatus {
    guard(|| {
        null_check(counts, "counts")?;
        null_check(out, "out")?;
        let c = slice::from_raw_parts(counts, 3);
        let spec = generate_scene(extent, resolution, [c[0], c[1], c[2]], seed).or_status()?;
        *out = Box::into_raw(Box::new(HmScene(Scene::new(spec))));
        Ok(())
    })
}

/// Surface height and class at `(x, y)`.
#[no_mangle]
pub unsafe extern "C" fn hm_scene_sample(
    scene: *const HmScene,
    x: f64,
    y: f64,
    out_height: *mut f64,
    out_label: *mut u8,
) -> HmStatus {
    guard(|| {
        null_check(scene, "scene")?;
        null_check(out_height, "out_height")?;
        null_check(out_label, "out_label")?;
        let (h, l) = (*scene).0.sample(x, y).or_status()?;
        *out_height = h;
        *out_label = l;
        Ok(())
    })
}

/// Scene description as JSON. The returned string must be released with
/// [`hm_string_free`].
#[no_mangle]
pub unsafe extern "C" fn hm_scene_to_json(scene: *const HmScene, out: *mut *mut c_char) -> HmStatus {
    guard(|| {
        null_check(scene, "scene")?;
        null_check(out, "out")?;
        let json = (*scene).0.spec().to_json().or_status()?;
        *out = CString::new(json).map_err(|_| invalid("JSON contains NUL"))?.into_raw();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn hm_scene_free(scene: *mut HmScene) {
    if !scene.is_null() {
        drop(Box::from_raw(scene));
    }
}

#[no_mangle]
pub unsafe extern "C" fn hm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Empty `width x height` vertex grid with uniform class posteriors.
#[no_mangle]
pub unsafe extern "C" fn hm_field_new(
    width: usize,
    height: usize,
    resolution: f64,
    origin_x: f64,
    origin_y: f64,
    num_classes: usize,
    out: *mut *mut HmField,
) -> HmStatus {
    guard(|| {
        null_check(out, "out")?;
        let f = HeightField::new(width, height, resolution, (origin_x, origin_y), num_classes).or_status()?;
        *out = Box::into_raw(Box::new(HmField(f)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn hm_field_free(field: *mut HmField) {
    if !field.is_null() {
        drop(Box::from_raw(field));
    }
}

#[no_mangle]
pub unsafe extern "C" fn hm_field_dims(
    field: *const HmField,
    out_width: *mut usize,
    out_height: *mut usize,
) -> HmStatus {
    guard(|| {
        null_check(field, "field")?;
        null_check(out_width, "out_width")?;
        null_check(out_height, "out_height")?;
        *out_width = (*field).0.width();
        *out_height = (*field).0.height();
        Ok(())
    })
}

/// Fraction of vertices with at least one height observation.
#[no_mangle]
pub unsafe extern "C" fn hm_field_coverage(field: *const HmField, out: *mut f64) -> HmStatus {
    guard(|| {
        null_check(field, "field")?;
        null_check(out, "out")?;
        *out = (*field).0.coverage();
        Ok(())
    })
}

/// Fuses one depth frame. `depth` holds `width * height` metres (row-major,
/// nonpositive = invalid). `probs` holds `num_classes` probabilities per
/// pixel, or is null for geometry-only fusion. `rotation` is the row-major
/// world-from-camera rotation and `translation` the camera position.
#[no_mangle]
pub unsafe extern "C" fn hm_field_fuse_frame(
    field: *mut HmField,
    depth: *const f64,
    probs: *const f64,
    intrinsics: *const HmIntrinsics,
    rotation: *const f64,
    translation: *const f64,
    alpha: f64,
) -> HmStatus {
    guard(|| {
        null_check(field, "field")?;
        null_check(depth, "depth")?;
        null_check(intrinsics, "intrinsics")?;
        null_check(rotation, "rotation")?;
        null_check(translation, "translation")?;
        let i = *intrinsics;
        let intr = Intrinsics {
            fx: i.fx,
            fy: i.fy,
            cx: i.cx,
            cy: i.cy,
            width: i.width,
            height: i.height,
        };
        intr.validate().or_status()?;
        let mut r = [0.0; 9];
        r.copy_from_slice(slice::from_raw_parts(rotation, 9));
        let mut t = [0.0; 3];
        t.copy_from_slice(slice::from_raw_parts(translation, 3));
        let pose = CameraPose::from_row_major(r, t).or_status()?;
        let n = intr.num_pixels();
        let depth = Raster::from_vec(intr.width, intr.height, slice::from_raw_parts(depth, n).to_vec()).or_status()?;
        let f = &mut (*field).0;
        if !probs.is_null() {
            let c = f.num_classes();
            let dist = LabelDistributionImage::from_vec(
                intr.width,
                intr.height,
                c,
                slice::from_raw_parts(probs, n * c).to_vec(),
            )
            .or_status()?;
            let model = DecayModel::new(alpha, c).or_status()?;
            // validate before touching heights so a bad frame leaves the field unchanged
            let mut trial = f.clone();
            fuse_semantic(&mut trial, &depth, &dist, &intr, &pose, &model).or_status()?;
            *f = trial;
        }
        fuse_height(f, &depth, &intr, &pose);
        Ok(())
    })
}

/// Copies vertex heights (row-major, `len` must equal width * height).
#[no_mangle]
pub unsafe extern "C" fn hm_field_heights(field: *const HmField, out: *mut f64, len: usize) -> HmStatus {
    guard(|| {
        null_check(field, "field")?;
        null_check(out, "out")?;
        let h = (*field).0.heights();
        if len != h.len() {
            return Err(invalid(format!("buffer holds {len} values, field has {}", h.len())));
        }
        ptr::copy_nonoverlapping(h.as_ptr(), out, len);
        Ok(())
    })
}

/// Copies most probable classes per vertex; unobserved vertices get class 0.
#[no_mangle]
pub unsafe extern "C" fn hm_field_labels(field: *const HmField, out: *mut u8, len: usize) -> HmStatus {
    guard(|| {
        null_check(field, "field")?;
        null_check(out, "out")?;
        let labels = (*field).0.argmax_labels();
        if len != labels.len() {
            return Err(invalid(format!(
                "buffer holds {len} values, field has {}",
                labels.len()
            )));
        }
        ptr::copy_nonoverlapping(labels.as_slice().as_ptr(), out, len);
        Ok(())
    })
}

/// Runs the view-versus-map comparison and writes its CSV outputs to
/// `out_dir`. `config_json` may be null for the default configuration.
#[no_mangle]
pub unsafe extern "C" fn hm_run_comparison(config_json: *const c_char, out_dir: *const c_char) -> HmStatus {
    guard(|| {
        let cfg = if config_json.is_null() {
            ExperimentConfig::default()
        } else {
            ExperimentConfig::from_json(c_str(config_json, "config_json")?).or_status()?
        };
        let dir = c_str(out_dir, "out_dir")?;
        let prep = Prepared::new(&cfg).or_status()?;
        let runs = run_comparison(&prep).or_status()?;
        write_comparison_outputs(Path::new(dir), &prep, &runs).or_status()
    })
}

/// Label value marking pixels without a valid observation.
#[no_mangle]
pub extern "C" fn hm_no_label() -> u8 {
    NO_LABEL
}
