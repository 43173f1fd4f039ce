//! C ABI over `vtada-core`.
//!
//! Every fallible call returns a [`VtadaStatus`]; on failure the message is
//! kept per thread and read with [`vtada_last_error_message`]. Models and
//! datasets are opaque heap handles released with their `_free` function.
//! Panics never cross the boundary; they surface as `VTADA_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use vtada_core::adversarial::AdversarialModel;
use vtada_core::analysis::export_embeddings;
use vtada_core::data::{self, Domain, DomainDataset};
use vtada_core::train::{self, checkpoint_load, DataSource, TrainConfig, TrainSchedule};
use vtada_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VtadaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Data = 4,
    Format = 5,
    Checkpoint = 6,
    Numeric = 7,
    Contract = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VtadaDomain {
    Source = 0,
    Target = 1,
}

impl From<VtadaDomain> for Domain {
    fn from(d: VtadaDomain) -> Self {
        match d {
            VtadaDomain::Source => Domain::Source,
            VtadaDomain::Target => Domain::Target,
        }
    }
}

/// Trained model plus the config text it was trained with.
pub struct VtadaModel {
    model: AdversarialModel,
    config_text: String,
}

pub struct VtadaDataset {
    data: DomainDataset,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> VtadaStatus {
    match err {
        Error::Config(_) => VtadaStatus::Config,
        Error::Data(_) | Error::Label { .. } | Error::Io { .. } => VtadaStatus::Data,
        Error::Format { .. } => VtadaStatus::Format,
        Error::UnsupportedVersion { .. } | Error::Truncated(_) | Error::Checksum { .. } => VtadaStatus::Checkpoint,
        Error::NonFinite { .. } | Error::NumericDomain { .. } => VtadaStatus::Numeric,
        Error::Shape { .. } | Error::Contract(_) => VtadaStatus::Contract,
    }
}

struct Fail(VtadaStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

/// Runs `f`, recording any failure or panic as the thread's last error.
fn guard<F: FnOnce() -> Result<(), Fail>>(f: F) -> VtadaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => VtadaStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            VtadaStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(VtadaStatus::NullPointer, format!("{what} is NULL"))
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| Fail(VtadaStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn as_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut T, value: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

/// Message for the last failed call on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn vtada_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Crate version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn vtada_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Annealed learning rate of the default schedule at progress `p ∈ [0, 1]`.
///
/// # Safety
/// `out` must be valid for one `double` write.
#[no_mangle]
pub unsafe extern "C" fn vtada_lr_at(p: f64, out: *mut f64) -> VtadaStatus {
    guard(|| put(out, TrainSchedule::default().lr_at(p)?, "out"))
}

/// Domain-loss weight of the default schedule at progress `p ∈ [0, 1]`.
///
/// # Safety
/// `out` must be valid for one `double` write.
#[no_mangle]
pub unsafe extern "C" fn vtada_lambda_at(p: f64, out: *mut f64) -> VtadaStatus {
    guard(|| put(out, TrainSchedule::default().lambda_at(p)?, "out"))
}

/// Loads a checkpoint file into a new model handle.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vtada_checkpoint_load(path: *const c_char, out: *mut *mut VtadaModel) -> VtadaStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        let ck = checkpoint_load(&path)?;
        let handle = Box::new(VtadaModel {
            model: ck.model,
            config_text: ck.config_text,
        });
        put(out, Box::into_raw(handle), "out")
    })
}

/// Trains from a config file, writing run artifacts to `out_dir`, and
/// returns the trained model.
///
/// # Safety
/// Both paths must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vtada_train(
    config_path: *const c_char,
    out_dir: *const c_char,
    out: *mut *mut VtadaModel,
) -> VtadaStatus {
    guard(|| {
        let cfg = TrainConfig::from_file(&path_arg(config_path, "config_path")?)?;
        let dir = path_arg(out_dir, "out_dir")?;
        let outcome = train::train(&cfg, Some(&dir))?;
        let handle = Box::new(VtadaModel {
            model: outcome.model,
            config_text: cfg.to_text(),
        });
        put(out, Box::into_raw(handle), "out")
    })
}

/// # Safety
/// `model` must come from this library and not be used afterwards. NULL is a no-op.
#[no_mangle]
pub unsafe extern "C" fn vtada_model_free(model: *mut VtadaModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Length of one feature vector, or 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn vtada_model_feature_dim(model: *const VtadaModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.config.vit.feature_dim)
}

/// Number of classes, or 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn vtada_model_num_classes(model: *const VtadaModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.num_classes())
}

/// Loads images from a class-per-directory tree or a manifest file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vtada_dataset_load(
    path: *const c_char,
    domain: VtadaDomain,
    out: *mut *mut VtadaDataset,
) -> VtadaStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        let ds = match DataSource::parse(&path.to_string_lossy()) {
            DataSource::Manifest(p) => data::load_manifest(&p)?,
            DataSource::Dir(p) => data::load_image_dir(&p)?,
            DataSource::Builtin => {
                return Err(Fail(
                    VtadaStatus::Config,
                    "use vtada_dataset_builtin for generated data".into(),
                ))
            }
        };
        let handle = Box::new(VtadaDataset {
            data: ds.with_domain(domain.into()),
        });
        put(out, Box::into_raw(handle), "out")
    })
}

/// Regenerates the source or target set the model was trained on.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vtada_dataset_builtin(
    model: *const VtadaModel,
    domain: VtadaDomain,
    out: *mut *mut VtadaDataset,
) -> VtadaStatus {
    guard(|| {
        let m = as_ref(model, "model")?;
        if m.config_text.is_empty() {
            return Err(Fail(VtadaStatus::Config, "model carries no training config".into()));
        }
        let run = train::load_run_data(&TrainConfig::parse(&m.config_text)?)?;
        let data = match domain {
            VtadaDomain::Source => run.source,
            VtadaDomain::Target => run.target,
        };
        put(out, Box::into_raw(Box::new(VtadaDataset { data })), "out")
    })
}

/// Number of images, or 0 for NULL.
///
/// # Safety
/// `dataset` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn vtada_dataset_len(dataset: *const VtadaDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.data.len())
}

/// # Safety
/// `dataset` must come from this library and not be used afterwards. NULL is a no-op.
#[no_mangle]
pub unsafe extern "C" fn vtada_dataset_free(dataset: *mut VtadaDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Classification accuracy (a fraction) on a labeled dataset.
///
/// # Safety
/// Handles must be live; `out` must be valid for one `double` write.
#[no_mangle]
pub unsafe extern "C" fn vtada_evaluate(
    model: *const VtadaModel,
    dataset: *const VtadaDataset,
    out: *mut f64,
) -> VtadaStatus {
    guard(|| {
        let acc = train::evaluate(&as_ref(model, "model")?.model, &as_ref(dataset, "dataset")?.data)?;
        put(out, acc, "out")
    })
}

/// Writes the `len × feature_dim` row-major features into `buf`. `written`
/// receives the number of doubles required, also when `capacity` is too
/// small (`VTADA_STATUS_BUFFER_TOO_SMALL`), so callers can size the buffer.
///
/// # Safety
/// Handles must be live; `buf` must be valid for `capacity` doubles;
/// `written` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vtada_features(
    model: *const VtadaModel,
    dataset: *const VtadaDataset,
    buf: *mut f64,
    capacity: usize,
    written: *mut usize,
) -> VtadaStatus {
    guard(|| {
        let m = as_ref(model, "model")?;
        let d = as_ref(dataset, "dataset")?;
        let need = d.data.len() * m.model.config.vit.feature_dim;
        put(written, need, "written")?;
        if capacity < need {
            return Err(Fail(
                VtadaStatus::BufferTooSmall,
                format!("buffer holds {capacity} doubles, {need} needed"),
            ));
        }
        if need == 0 {
            return Ok(());
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        let set = export_embeddings(&m.model, &[&d.data])?;
        std::slice::from_raw_parts_mut(buf, need).copy_from_slice(set.vectors.data());
        Ok(())
    })
}
