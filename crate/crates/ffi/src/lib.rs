//! C ABI for `bsdcnn`.
//!
//! Every function returns a [`BsdcnnStatus`]; on failure a message is kept
//! per thread and can be read with [`bsdcnn_last_error_message`]. Models are
//! opaque handles created by [`bsdcnn_model_build`] or [`bsdcnn_model_load`]
//! and released with [`bsdcnn_model_free`].
//!
//! Windows are passed as `electrodes × samples` floats, one electrode after
//! another.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use libc::c_char;

use bsdcnn::eval::roc_auc;
use bsdcnn::{Backend, ConvMode, DenseTensor, Error, InferenceEngine, Model, ModelConfig};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BsdcnnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    InvalidConfig = 4,
    CorruptModel = 5,
    CorruptInput = 6,
    InvalidDataset = 7,
    TrainingDiverged = 8,
    Io = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BsdcnnBackend {
    Packed = 0,
    Arithmetic = 1,
    Naive = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BsdcnnConvMode {
    OneDOneD = 0,
    OneDTwoD = 1,
    TwoDOneD = 2,
    TwoDTwoD = 3,
}

/// Parameter memory and operation counts of a model.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BsdcnnResources {
    pub parameter_count: u64,
    pub parameter_bits: u64,
    pub mac_count: u64,
    pub binary_op_count: u64,
    pub memory_reduction_factor: f64,
    pub compute_reduction_factor: f64,
}

/// Opaque model handle.
pub struct BsdcnnModel {
    engine: InferenceEngine,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> BsdcnnStatus {
    match e {
        Error::InvalidShape(_) | Error::InvalidValue(_) => BsdcnnStatus::InvalidArgument,
        Error::ShapeMismatch(_) => BsdcnnStatus::ShapeMismatch,
        Error::InvalidConfig(_) => BsdcnnStatus::InvalidConfig,
        Error::CorruptModel(_) => BsdcnnStatus::CorruptModel,
        Error::CorruptInput(_) | Error::InvalidAnnotations(_) => BsdcnnStatus::CorruptInput,
        Error::InvalidDataset(_) => BsdcnnStatus::InvalidDataset,
        Error::TrainingDiverged { .. } => BsdcnnStatus::TrainingDiverged,
        Error::Io(_) => BsdcnnStatus::Io,
    }
}

struct Failure(BsdcnnStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(BsdcnnStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> BsdcnnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            BsdcnnStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            BsdcnnStatus::Panic
        }
    }
}

unsafe fn path_arg(path: *const c_char) -> Result<PathBuf, Failure> {
    if path.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(path)
        .to_str()
        .map_err(|_| Failure(BsdcnnStatus::InvalidArgument, "path is not UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

unsafe fn model_ref<'a>(model: *const BsdcnnModel) -> Result<&'a BsdcnnModel, Failure> {
    model.as_ref().ok_or_else(|| null("model"))
}

fn store(out: *mut *mut BsdcnnModel, model: Model) -> Result<(), Failure> {
    let handle = Box::new(BsdcnnModel {
        engine: InferenceEngine::new(model),
    });
    // SAFETY: checked non-null by the caller of `store`.
    unsafe { *out = Box::into_raw(handle) };
    Ok(())
}

fn backend(code: u32) -> Result<Backend, Failure> {
    match code {
        c if c == BsdcnnBackend::Packed as u32 => Ok(Backend::Packed),
        c if c == BsdcnnBackend::Arithmetic as u32 => Ok(Backend::Arithmetic),
        c if c == BsdcnnBackend::Naive as u32 => Ok(Backend::Naive),
        c => Err(Failure(BsdcnnStatus::InvalidArgument, format!("unknown backend {c}"))),
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn bsdcnn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null after a success.
/// The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn bsdcnn_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Builds a freshly initialized model for `electrodes × samples` windows.
/// `conv_mode` is a [`BsdcnnConvMode`] value.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn bsdcnn_model_build(
    electrodes: usize,
    samples: usize,
    conv_mode: u32,
    seed: u64,
    out: *mut *mut BsdcnnModel,
) -> BsdcnnStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let mode = *ConvMode::ALL
            .get(conv_mode as usize)
            .ok_or_else(|| Failure(BsdcnnStatus::InvalidArgument, format!("unknown conv mode {conv_mode}")))?;
        let model = Model::build(ModelConfig::for_input(electrodes, samples).with_conv_mode(mode), seed)?;
        store(out, model)
    })
}

/// Loads a model file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bsdcnn_model_load(path: *const c_char, out: *mut *mut BsdcnnModel) -> BsdcnnStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = path_arg(path)?;
        store(out, Model::load(path)?)
    })
}

/// Writes a model file.
///
/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn bsdcnn_model_save(model: *const BsdcnnModel, path: *const c_char) -> BsdcnnStatus {
    guard(|| {
        let m = model_ref(model)?;
        let path = path_arg(path)?;
        m.engine.model().save(path)?;
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bsdcnn_model_free(model: *mut BsdcnnModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Expected window geometry.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn bsdcnn_model_input_shape(
    model: *const BsdcnnModel,
    electrodes: *mut usize,
    samples: *mut usize,
) -> BsdcnnStatus {
    guard(|| {
        let m = model_ref(model)?;
        if electrodes.is_null() || samples.is_null() {
            return Err(null("output"));
        }
        let shape = m.engine.model().input_shape();
        *electrodes = shape.electrodes;
        *samples = shape.time;
        Ok(())
    })
}

/// Preictal probabilities of `count` consecutive windows. `backend_kind` is
/// a [`BsdcnnBackend`] value.
///
/// # Safety
/// `windows` must hold `count × electrodes × samples` floats and `scores`
/// room for `count` floats.
#[no_mangle]
pub unsafe extern "C" fn bsdcnn_model_predict(
    model: *const BsdcnnModel,
    windows: *const f32,
    count: usize,
    backend_kind: u32,
    scores: *mut f32,
) -> BsdcnnStatus {
    guard(|| {
        let m = model_ref(model)?;
        let backend = backend(backend_kind)?;
        if count == 0 {
            return Ok(());
        }
        if windows.is_null() || scores.is_null() {
            return Err(null("buffer"));
        }
        let shape = m.engine.model().input_shape();
        let input = std::slice::from_raw_parts(windows, count * shape.len());
        let out = std::slice::from_raw_parts_mut(scores, count);
        for (chunk, score) in input.chunks_exact(shape.len()).zip(out.iter_mut()) {
            let window = DenseTensor::from_vec(shape, chunk.to_vec())?;
            *score = m.engine.forward(&window, backend)?[1];
        }
        Ok(())
    })
}

/// Totals and reduction factors of the model's resource report.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bsdcnn_model_resources(model: *const BsdcnnModel, out: *mut BsdcnnResources) -> BsdcnnStatus {
    guard(|| {
        let m = model_ref(model)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let r = m.engine.model().resource_report();
        *out = BsdcnnResources {
            parameter_count: r.totals.parameter_count,
            parameter_bits: r.totals.parameter_bits,
            mac_count: r.totals.mac_count,
            binary_op_count: r.totals.binary_op_count,
            memory_reduction_factor: r.memory_reduction_factor,
            compute_reduction_factor: r.compute_reduction_factor,
        };
        Ok(())
    })
}

/// ROC AUC of `scores` against 0/1 `labels` (1 = preictal).
///
/// # Safety
/// `scores` and `labels` must hold `count` elements; `auc` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bsdcnn_roc_auc(
    scores: *const f64,
    labels: *const u8,
    count: usize,
    auc: *mut f64,
) -> BsdcnnStatus {
    guard(|| {
        if scores.is_null() || labels.is_null() || auc.is_null() {
            return Err(null("buffer"));
        }
        let s = std::slice::from_raw_parts(scores, count);
        let l: Vec<bool> = std::slice::from_raw_parts(labels, count).iter().map(|&x| x != 0).collect();
        *auc = roc_auc(s, &l)?;
        Ok(())
    })
}
