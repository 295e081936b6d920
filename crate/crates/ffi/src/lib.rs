//! C ABI over the `fapn` crate.
//!
//! Tensors and models are opaque heap handles created by `*_new`/`*_load`
//! and released with the matching `*_free`. Every fallible call returns a
//! [`FapnStatus`]; on failure [`fapn_last_error`] describes the error for
//! the calling thread. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use fapn::config::ExperimentConfig;
use fapn::metrics;
use fapn::nn::{Arch, Model};
use fapn::train::{self, CHECKPOINT_DIR, CONFIG_FILE};
use fapn::{Dims, Error, LabelMap, Rng, Tensor};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FapnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Shape = 3,
    Config = 4,
    Data = 5,
    NonFinite = 6,
    Format = 7,
    Io = 8,
    Contract = 9,
    Panic = 10,
}

/// Opaque tensor handle.
pub struct FapnTensor {
    inner: Tensor,
}

/// Opaque model handle.
pub struct FapnModel {
    inner: Model,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> FapnStatus {
    match e {
        Error::ShapeMismatch { .. } | Error::Shape { .. } => FapnStatus::Shape,
        Error::Config { .. } => FapnStatus::Config,
        Error::Data(_) => FapnStatus::Data,
        Error::NonFinite(_) => FapnStatus::NonFinite,
        Error::Format(_) => FapnStatus::Format,
        Error::Io { .. } => FapnStatus::Io,
        Error::Contract(_) => FapnStatus::Contract,
    }
}

enum Failure {
    Lib(Error),
    Null(&'static str),
    Utf8,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> FapnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FapnStatus::Ok,
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            FapnStatus::NullPointer
        }
        Ok(Err(Failure::Utf8)) => {
            set_error("string argument is not valid UTF-8".into());
            FapnStatus::InvalidUtf8
        }
        Err(_) => {
            set_error("internal panic".into());
            FapnStatus::Panic
        }
    }
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null("path"));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure::Utf8)
}

unsafe fn as_ref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn labels_arg(p: *const usize, h: usize, w: usize, what: &'static str) -> Result<LabelMap, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(LabelMap::new(h, w, slice::from_raw_parts(p, h * w).to_vec())?)
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn fapn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Copies `n*c*h*w` values from `data` into a new tensor.
///
/// # Safety
/// `data` must point to `n*c*h*w` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fapn_tensor_new(
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    data: *const f64,
    out: *mut *mut FapnTensor,
) -> FapnStatus {
    guard(|| {
        if data.is_null() || out.is_null() {
            return Err(Failure::Null("data/out"));
        }
        let dims = Dims::new(n, c, h, w)?;
        let values = slice::from_raw_parts(data, dims.len()).to_vec();
        let t = Tensor::new(dims, values)?;
        *out = Box::into_raw(Box::new(FapnTensor { inner: t }));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fapn_tensor_load(path: *const c_char, out: *mut *mut FapnTensor) -> FapnStatus {
    guard(|| {
        let p = path_arg(path)?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let t = Tensor::load(p)?;
        *out = Box::into_raw(Box::new(FapnTensor { inner: t }));
        Ok(())
    })
}

/// # Safety
/// `t` must be a live tensor handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fapn_tensor_save(t: *const FapnTensor, path: *const c_char) -> FapnStatus {
    guard(|| {
        let t = as_ref(t, "tensor")?;
        t.inner.save(path_arg(path)?)?;
        Ok(())
    })
}

/// Writes `(n, c, h, w)` into `dims[0..4]`.
///
/// # Safety
/// `t` must be a live tensor handle; `dims` must hold 4 writable values.
#[no_mangle]
pub unsafe extern "C" fn fapn_tensor_dims(t: *const FapnTensor, dims: *mut usize) -> FapnStatus {
    guard(|| {
        let t = as_ref(t, "tensor")?;
        if dims.is_null() {
            return Err(Failure::Null("dims"));
        }
        let d = t.inner.dims().as_array();
        slice::from_raw_parts_mut(dims, 4).copy_from_slice(&d);
        Ok(())
    })
}

/// Borrowed row-major values; valid until the handle is freed. Writes the
/// element count to `len` when it is not null.
///
/// # Safety
/// `t` must be a live tensor handle or null.
#[no_mangle]
pub unsafe extern "C" fn fapn_tensor_data(t: *const FapnTensor, len: *mut usize) -> *const f64 {
    match t.as_ref() {
        Some(t) => {
            if let Some(l) = len.as_mut() {
                *l = t.inner.len();
            }
            t.inner.data().as_ptr()
        }
        None => ptr::null(),
    }
}

/// # Safety
/// `t` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fapn_tensor_free(t: *mut FapnTensor) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// Fresh model with seeded initialisation.
///
/// # Safety
/// `arch` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fapn_model_new(
    arch: *const c_char,
    classes: usize,
    width: usize,
    seed: u64,
    out: *mut *mut FapnModel,
) -> FapnStatus {
    guard(|| {
        let a: Arch = path_arg(arch)?.parse()?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let mut rng = Rng::derived(seed, "init");
        let m = Model::new(a, classes, width, &mut rng)?;
        *out = Box::into_raw(Box::new(FapnModel { inner: m }));
        Ok(())
    })
}

/// Loads a trained model from a run directory holding `config.txt` and
/// `checkpoint/`.
///
/// # Safety
/// `run_dir` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fapn_model_load(run_dir: *const c_char, out: *mut *mut FapnModel) -> FapnStatus {
    guard(|| {
        let dir = Path::new(path_arg(run_dir)?);
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let cfg = ExperimentConfig::load(&dir.join(CONFIG_FILE))?;
        let m = train::load_model(&cfg, &dir.join(CHECKPOINT_DIR))?;
        *out = Box::into_raw(Box::new(FapnModel { inner: m }));
        Ok(())
    })
}

/// # Safety
/// `m` must be a live model handle.
#[no_mangle]
pub unsafe extern "C" fn fapn_model_classes(m: *const FapnModel) -> usize {
    m.as_ref().map_or(0, |m| m.inner.classes)
}

/// # Safety
/// `m` must be a live model handle.
#[no_mangle]
pub unsafe extern "C" fn fapn_model_param_count(m: *const FapnModel) -> usize {
    m.as_ref().map_or(0, |m| m.inner.param_count())
}

/// Input-resolution logits `(1, classes, H, W)` for an image `(1, 3, H, W)`.
///
/// # Safety
/// `m` and `image` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fapn_model_logits(
    m: *const FapnModel,
    image: *const FapnTensor,
    out: *mut *mut FapnTensor,
) -> FapnStatus {
    guard(|| {
        let m = as_ref(m, "model")?;
        let img = as_ref(image, "image")?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let t = m.inner.logits(&img.inner)?;
        *out = Box::into_raw(Box::new(FapnTensor { inner: t }));
        Ok(())
    })
}

/// Writes `H*W` argmax class ids into `labels`; `len` must equal `H*W`.
///
/// # Safety
/// `m` and `image` must be live handles; `labels` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn fapn_model_predict(
    m: *const FapnModel,
    image: *const FapnTensor,
    labels: *mut usize,
    len: usize,
) -> FapnStatus {
    guard(|| {
        let m = as_ref(m, "model")?;
        let img = as_ref(image, "image")?;
        if labels.is_null() {
            return Err(Failure::Null("labels"));
        }
        let pred = m.inner.predict(&img.inner)?;
        if pred.data().len() != len {
            return Err(Error::Contract(format!("labels buffer holds {len}, prediction has {}", pred.data().len())).into());
        }
        slice::from_raw_parts_mut(labels, len).copy_from_slice(pred.data());
        Ok(())
    })
}

/// # Safety
/// `m` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fapn_model_free(m: *mut FapnModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Mean IoU over classes present in `gt`.
///
/// # Safety
/// `pred` and `gt` must each hold `h*w` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fapn_miou(
    pred: *const usize,
    gt: *const usize,
    h: usize,
    w: usize,
    classes: usize,
    out: *mut f64,
) -> FapnStatus {
    guard(|| {
        let (p, g) = (labels_arg(pred, h, w, "pred")?, labels_arg(gt, h, w, "gt")?);
        let v = metrics::miou(&p, &g, classes)?;
        *out.as_mut().ok_or(Failure::Null("out"))? = v;
        Ok(())
    })
}

/// mIoU over pixels within Chebyshev distance `n` of a ground-truth
/// outline. `empty_band` (may be null) is set to 1 when the band is empty,
/// in which case the score is 1.0.
///
/// # Safety
/// `pred` and `gt` must each hold `h*w` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fapn_boundary_miou(
    pred: *const usize,
    gt: *const usize,
    h: usize,
    w: usize,
    classes: usize,
    n: usize,
    out: *mut f64,
    empty_band: *mut c_int,
) -> FapnStatus {
    guard(|| {
        let (p, g) = (labels_arg(pred, h, w, "pred")?, labels_arg(gt, h, w, "gt")?);
        let s = metrics::boundary_miou(&p, &g, classes, n)?;
        *out.as_mut().ok_or(Failure::Null("out"))? = s.miou;
        if let Some(e) = empty_band.as_mut() {
            *e = c_int::from(s.empty_band);
        }
        Ok(())
    })
}
