//! C ABI over a trained `chainlabel` checkpoint.
//!
//! Every function returns a [`ChainlabelStatus`]. On failure a description is
//! kept per thread and can be read with [`chainlabel_last_error`]. Models are
//! opaque handles created by [`chainlabel_model_load`] and released with
//! [`chainlabel_model_free`]. A handle is read-only after loading and may be
//! shared between threads.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use chainlabel::decode::{predict_topk, BeamConfig};
use chainlabel::metrics::nearest_labels;
use chainlabel::{Checkpoint, Error};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChainlabelStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Shape = 5,
    UnknownLabel = 6,
    BufferTooSmall = 7,
    Panic = 8,
    Internal = 9,
}

/// Loaded checkpoint. Opaque to C.
pub struct ChainlabelModel {
    ckpt: Checkpoint,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn clear_last_error() {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
}

struct Failure(ChainlabelStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io(_) => ChainlabelStatus::Io,
            Error::Json(_) | Error::Parse { .. } | Error::Checkpoint(_) => ChainlabelStatus::Parse,
            Error::Shape(_) => ChainlabelStatus::Shape,
            Error::UnknownLabel(_) | Error::LabelOutOfRange { .. } => ChainlabelStatus::UnknownLabel,
            Error::InvalidArgument(_) | Error::Config(_) | Error::InvalidSequence(_) => {
                ChainlabelStatus::InvalidArgument
            }
            _ => ChainlabelStatus::Internal,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(ChainlabelStatus::NullPointer, format!("{what} is null"))
}

fn guard<F>(body: F) -> ChainlabelStatus
where
    F: FnOnce() -> Result<(), Failure>,
{
    clear_last_error();
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => ChainlabelStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            set_last_error(format!("panic: {msg}"));
            ChainlabelStatus::Panic
        }
    }
}

unsafe fn model_ref<'a>(model: *const ChainlabelModel) -> Result<&'a ChainlabelModel, Failure> {
    model.as_ref().ok_or_else(|| null("model"))
}

/// Message for the most recent failure on this thread, or NULL. The pointer
/// stays valid until the next `chainlabel_*` call on the same thread.
#[no_mangle]
pub extern "C" fn chainlabel_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Static name of a status code.
#[no_mangle]
pub extern "C" fn chainlabel_status_name(status: ChainlabelStatus) -> *const c_char {
    let s: &'static CStr = match status {
        ChainlabelStatus::Ok => c"ok",
        ChainlabelStatus::NullPointer => c"null pointer",
        ChainlabelStatus::InvalidArgument => c"invalid argument",
        ChainlabelStatus::Io => c"i/o error",
        ChainlabelStatus::Parse => c"parse error",
        ChainlabelStatus::Shape => c"shape mismatch",
        ChainlabelStatus::UnknownLabel => c"unknown label",
        ChainlabelStatus::BufferTooSmall => c"buffer too small",
        ChainlabelStatus::Panic => c"panic",
        ChainlabelStatus::Internal => c"internal error",
    };
    s.as_ptr()
}

/// Loads a JSON checkpoint. On success `*out` owns a new handle.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn chainlabel_model_load(
    path: *const c_char,
    out: *mut *mut ChainlabelModel,
) -> ChainlabelStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Failure(ChainlabelStatus::InvalidArgument, "path is not UTF-8".into()))?;
        let ckpt = Checkpoint::load(path)?;
        *out = Box::into_raw(Box::new(ChainlabelModel { ckpt }));
        Ok(())
    })
}

/// Releases a handle. NULL is ignored.
///
/// # Safety
/// `model` must come from [`chainlabel_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn chainlabel_model_free(model: *mut ChainlabelModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of real labels K.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn chainlabel_model_vocab_size(
    model: *const ChainlabelModel,
    out: *mut usize,
) -> ChainlabelStatus {
    guard(|| {
        let m = model_ref(model)?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = m.ckpt.hyper().vocab_size;
        Ok(())
    })
}

/// Length of the feature vector the model expects.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn chainlabel_model_feature_dim(
    model: *const ChainlabelModel,
    out: *mut usize,
) -> ChainlabelStatus {
    guard(|| {
        let m = model_ref(model)?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = m.ckpt.hyper().feature_dim;
        Ok(())
    })
}

/// Copies the name of label `id` into `buf` with a trailing NUL.
/// `*required` receives the size needed including the NUL, also when the
/// call fails with `BUFFER_TOO_SMALL`.
///
/// # Safety
/// `buf` must have room for `buf_len` bytes (it may be NULL when `buf_len`
/// is 0); `required` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn chainlabel_model_label_name(
    model: *const ChainlabelModel,
    id: usize,
    buf: *mut c_char,
    buf_len: usize,
    required: *mut usize,
) -> ChainlabelStatus {
    guard(|| {
        let m = model_ref(model)?;
        let name = m.ckpt.vocab.label(id)?;
        let need = name.len() + 1;
        if let Some(r) = required.as_mut() {
            *r = need;
        }
        if buf_len < need {
            return Err(Failure(
                ChainlabelStatus::BufferTooSmall,
                format!("label needs {need} bytes, buffer has {buf_len}"),
            ));
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        ptr::copy_nonoverlapping(name.as_ptr(), buf.cast::<u8>(), name.len());
        *buf.add(name.len()) = 0;
        Ok(())
    })
}

/// Looks up the id of a label name.
///
/// # Safety
/// `name` must be NUL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn chainlabel_model_label_id(
    model: *const ChainlabelModel,
    name: *const c_char,
    out: *mut usize,
) -> ChainlabelStatus {
    guard(|| {
        let m = model_ref(model)?;
        if name.is_null() {
            return Err(null("name"));
        }
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let name = CStr::from_ptr(name)
            .to_str()
            .map_err(|_| Failure(ChainlabelStatus::InvalidArgument, "name is not UTF-8".into()))?;
        *out = m.ckpt.vocab.id(name)?;
        Ok(())
    })
}

/// Decodes up to `k` ranked label ids for one image with beam search.
///
/// `min_len` labels are emitted before END may end the path; `beam_width`
/// of 0 selects 3. Ids are written to `out_ids` (capacity `k`), their count
/// to `*out_count` and the path log-probability to `*out_log_prob` (may be
/// NULL).
///
/// # Safety
/// `features` must point to `n_features` doubles and `out_ids` to `k`
/// writable slots.
#[no_mangle]
pub unsafe extern "C" fn chainlabel_predict(
    model: *const ChainlabelModel,
    features: *const f64,
    n_features: usize,
    k: usize,
    min_len: usize,
    beam_width: usize,
    out_ids: *mut usize,
    out_count: *mut usize,
    out_log_prob: *mut f64,
) -> ChainlabelStatus {
    guard(|| {
        let m = model_ref(model)?;
        if features.is_null() {
            return Err(null("features"));
        }
        if out_ids.is_null() {
            return Err(null("out_ids"));
        }
        let count = out_count.as_mut().ok_or_else(|| null("out_count"))?;
        *count = 0;
        let image = std::slice::from_raw_parts(features, n_features);
        let hyper = m.ckpt.hyper();
        let width = if beam_width == 0 { 3 } else { beam_width };
        let max_len = hyper.vocab_size;
        let cfg = BeamConfig::new(width, min_len.min(max_len), max_len, 1)?;
        let pred = predict_topk(image, &m.ckpt.params, k, &cfg)?;
        std::slice::from_raw_parts_mut(out_ids, k)[..pred.labels.len()].copy_from_slice(&pred.labels);
        *count = pred.labels.len();
        if let Some(lp) = out_log_prob.as_mut() {
            *lp = pred.log_prob;
        }
        Ok(())
    })
}

/// The `m` labels closest to label `id` by cosine similarity of their
/// embeddings, most similar first, `id` itself excluded.
///
/// # Safety
/// `out_ids` and `out_similarity` must each have `m` writable slots.
#[no_mangle]
pub unsafe extern "C" fn chainlabel_nearest_labels(
    model: *const ChainlabelModel,
    id: usize,
    m: usize,
    out_ids: *mut usize,
    out_similarity: *mut f64,
) -> ChainlabelStatus {
    guard(|| {
        let model = model_ref(model)?;
        if out_ids.is_null() {
            return Err(null("out_ids"));
        }
        if out_similarity.is_null() {
            return Err(null("out_similarity"));
        }
        let k = model.ckpt.hyper().vocab_size;
        if id >= k {
            return Err(Error::LabelOutOfRange { id, limit: k }.into());
        }
        let query = model.ckpt.params.label_embedding.row(id).to_vec();
        let found = nearest_labels(&query, &model.ckpt.params, m, &[id])?;
        let ids = std::slice::from_raw_parts_mut(out_ids, m);
        let sims = std::slice::from_raw_parts_mut(out_similarity, m);
        for (j, (label, sim)) in found.into_iter().enumerate() {
            ids[j] = label;
            sims[j] = sim;
        }
        Ok(())
    })
}
