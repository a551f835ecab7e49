//! C ABI for loading trained damage classifiers, preparing their inputs
//! and computing physics-guided source weights.
//!
//! Every fallible function returns a [`SeismdaStatus`]; on failure the
//! message is available from [`seismda_last_error`] on the same thread.
//! Models are opaque handles released with [`seismda_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::io::BufReader;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::slice;

use seismda::adapt::{predict, PhyMdanModel};
use seismda::physweights::weights_single_property;
use seismda::quakesim::label_damage;
use seismda::sigprep::{window_input, PrepConfig};
use seismda::{Error, Task};

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeismdaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    Io = 4,
    Format = 5,
    Internal = 6,
    Panic = 7,
}

/// Damage-diagnosis task.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeismdaTask {
    Detection = 0,
    Quantification = 1,
}

fn task_of(code: i32) -> Result<Task, Error> {
    match code {
        c if c == SeismdaTask::Detection as i32 => Ok(Task::Detection),
        c if c == SeismdaTask::Quantification as i32 => Ok(Task::Quantification),
        c => Err(Error::arg(format!("unknown task code {c}"))),
    }
}

fn elements(a: usize, b: usize) -> Result<usize, Error> {
    a.checked_mul(b)
        .ok_or_else(|| Error::arg("buffer size overflows"))
}

/// Trained classifier.
pub struct SeismdaModel {
    inner: PhyMdanModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> SeismdaStatus {
    match e {
        Error::Dimension(_) => SeismdaStatus::Dimension,
        Error::Argument(_) | Error::Config(_) | Error::Architecture(_) => {
            SeismdaStatus::InvalidArgument
        }
        Error::Io(_) => SeismdaStatus::Io,
        Error::Format(_) | Error::Json(_) => SeismdaStatus::Format,
        Error::Stage { source, .. } => status_of(source),
        _ => SeismdaStatus::Internal,
    }
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), SeismdaError>) -> SeismdaStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SeismdaStatus::Ok,
        Ok(Err(SeismdaError::Null(what))) => {
            set_error(format!("{what} is null"));
            SeismdaStatus::NullPointer
        }
        Ok(Err(SeismdaError::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            SeismdaStatus::Panic
        }
    }
}

enum SeismdaError {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for SeismdaError {
    fn from(e: Error) -> Self {
        SeismdaError::Lib(e)
    }
}

impl From<std::io::Error> for SeismdaError {
    fn from(e: std::io::Error) -> Self {
        SeismdaError::Lib(Error::Io(e))
    }
}

fn non_null<T>(p: *const T, what: &'static str) -> Result<(), SeismdaError> {
    if p.is_null() {
        Err(SeismdaError::Null(what))
    } else {
        Ok(())
    }
}

/// Message of the last failed call on this thread, or null. Valid until
/// the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn seismda_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn seismda_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint written by the `seismda` tool.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn seismda_model_load(
    path: *const c_char,
    out: *mut *mut SeismdaModel,
) -> SeismdaStatus {
    guard(|| {
        non_null(path, "path")?;
        non_null(out, "out")?;
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Error::arg("path is not valid UTF-8"))?;
        let inner = PhyMdanModel::load(BufReader::new(File::open(path)?))?;
        *out = Box::into_raw(Box::new(SeismdaModel { inner }));
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from [`seismda_model_load`] and not be used again.
#[no_mangle]
pub unsafe extern "C" fn seismda_model_free(model: *mut SeismdaModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of damage classes, or 0 for a null model.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn seismda_model_num_classes(model: *const SeismdaModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.num_classes)
}

/// Spectrum length `l` per channel, or 0 for a null model.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn seismda_model_input_len(model: *const SeismdaModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.input_len)
}

/// Classifies `n` inputs stored row-major in `inputs` (`n * 3 * l`
/// values). Writes `n` classes; when `probs` is non-null also writes
/// `n * K` class probabilities.
///
/// # Safety
/// Buffers must hold the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn seismda_model_predict(
    model: *const SeismdaModel,
    inputs: *const f64,
    n: usize,
    classes: *mut usize,
    probs: *mut f64,
) -> SeismdaStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(inputs, "inputs")?;
        non_null(classes, "classes")?;
        let m = &(*model).inner;
        if n == 0 {
            return Err(Error::arg("no inputs").into());
        }
        let width = 3 * m.input_len;
        let data = slice::from_raw_parts(inputs, elements(n, width)?);
        let rows: Vec<&[f64]> = data.chunks(width).collect();
        let (pred, p) = predict(m, &rows)?;
        slice::from_raw_parts_mut(classes, n).copy_from_slice(&pred);
        if !probs.is_null() {
            let k = m.num_classes;
            let out = slice::from_raw_parts_mut(probs, elements(n, k)?);
            for (dst, src) in out.chunks_mut(k).zip(&p) {
                dst.copy_from_slice(src);
            }
        }
        Ok(())
    })
}

/// Builds one model input from `len` samples of ground, floor and ceiling
/// acceleration at `fs` Hz, using `l` spectrum points up to `f_max` Hz and
/// the default smoothing. Writes `3 * l` values to `out`.
///
/// # Safety
/// Input buffers must hold `len` values and `out` `3 * l`.
#[no_mangle]
pub unsafe extern "C" fn seismda_prepare_window(
    ground: *const f64,
    floor: *const f64,
    ceiling: *const f64,
    len: usize,
    fs: f64,
    l: usize,
    f_max: f64,
    out: *mut f64,
) -> SeismdaStatus {
    guard(|| {
        non_null(ground, "ground")?;
        non_null(floor, "floor")?;
        non_null(ceiling, "ceiling")?;
        non_null(out, "out")?;
        let cfg = PrepConfig {
            l,
            f_max,
            ..PrepConfig::default()
        };
        let v = window_input(
            slice::from_raw_parts(ground, len),
            slice::from_raw_parts(floor, len),
            slice::from_raw_parts(ceiling, len),
            fs,
            &cfg,
        )?;
        slice::from_raw_parts_mut(out, elements(3, l)?).copy_from_slice(&v);
        Ok(())
    })
}

/// Damage class of a peak story drift ratio; `task` is a [`SeismdaTask`]
/// value.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn seismda_label_damage(
    peak_sdr: f64,
    task: i32,
    out: *mut usize,
) -> SeismdaStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = label_damage(peak_sdr, task_of(task)?)?;
        Ok(())
    })
}

/// Physics weights of `n` sources from one property. Writes `n` weights
/// summing to one.
///
/// # Safety
/// `sources` and `out` must hold `n` values.
#[no_mangle]
pub unsafe extern "C" fn seismda_physics_weights(
    sources: *const f64,
    n: usize,
    target: f64,
    eps: f64,
    out: *mut f64,
) -> SeismdaStatus {
    guard(|| {
        non_null(sources, "sources")?;
        non_null(out, "out")?;
        let w = weights_single_property(slice::from_raw_parts(sources, n), target, eps)?;
        slice::from_raw_parts_mut(out, n).copy_from_slice(&w.weights);
        Ok(())
    })
}
