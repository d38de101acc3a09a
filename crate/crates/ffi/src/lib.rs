//! C ABI over `freqattn`.
//!
//! Every fallible call returns an [`FaStatus`]. On failure the message is
//! available from [`fa_last_error_message`] on the same thread until the next
//! failing call. Objects are opaque handles released with their `_free`
//! function; passing NULL to a `_free` function is a no-op.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use freqattn::attention::{Aggregation, AttentionBlock, Variant};
use freqattn::cli::{verify_dct_with, Model};
use freqattn::dct::{basis_plane, select_frequency_indices, SelectionStrategy};
use freqattn::eval::{evaluate, DcfParams};
use freqattn::features::{logmel, FeatureMatrix, MelConfig, Waveform};
use freqattn::{Error, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    Index = 4,
    Capacity = 5,
    Config = 6,
    Numeric = 7,
    Format = 8,
    Parse = 9,
    Input = 10,
    State = 11,
    Io = 12,
    Panic = 13,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaVariant {
    Se = 0,
    Sfsc = 1,
    Mfsc = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaAggregation {
    Avg = 0,
    Max = 1,
    AvgMax = 2,
}

/// Trained network loaded from a checkpoint.
pub struct FaModel(Model);

/// Log-mel feature matrix, `n_mels × frames`, row-major.
pub struct FaFeatures(FeatureMatrix);

/// One attention block with seeded weights.
pub struct FaAttention(AttentionBlock);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> FaStatus {
    match e {
        Error::Dimension(_) => FaStatus::Dimension,
        Error::Index(_) => FaStatus::Index,
        Error::Capacity(_) => FaStatus::Capacity,
        Error::Config(_) => FaStatus::Config,
        Error::Numeric(_) => FaStatus::Numeric,
        Error::Format(_) => FaStatus::Format,
        Error::Parse { .. } => FaStatus::Parse,
        Error::Input(_) => FaStatus::Input,
        Error::State(_) => FaStatus::State,
        Error::Io(_) => FaStatus::Io,
    }
}

struct Fail(FaStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(FaStatus::NullPointer, format!("{what} is NULL"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> FaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FaStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            FaStatus::Panic
        }
    }
}

unsafe fn slice<'a>(p: *const f64, n: usize, what: &str) -> Result<&'a [f64], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn slice_mut<'a>(p: *mut f64, n: usize, what: &str) -> Result<&'a mut [f64], Fail> {
    if n == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, n))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Message for the most recent failure on this thread, or "" if none.
/// The pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn fa_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fa_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Runs the DCT property checks. `FA_STATUS_OK` when all of them hold.
#[no_mangle]
pub extern "C" fn fa_verify_dct() -> FaStatus {
    guard(|| {
        let mut sink = Vec::new();
        if verify_dct_with(&basis_plane, &mut sink)? {
            Ok(())
        } else {
            Err(Fail(FaStatus::Numeric, String::from_utf8_lossy(&sink).into_owned()))
        }
    })
}

/// Loads a checkpoint written by `freqattn train`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fa_model_load(path: *const c_char, out: *mut *mut FaModel) -> FaStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        if path.is_null() {
            return Err(null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Fail(FaStatus::InvalidArgument, "path is not UTF-8".into()))?;
        let model = Model::load(PathBuf::from(path))?;
        *out = Box::into_raw(Box::new(FaModel(model)));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`fa_model_load`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn fa_model_free(model: *mut FaModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Embedding length, or 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fa_model_embedding_dim(model: *const FaModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.net.embedding_dim())
}

/// Embeds a raw log-mel matrix (`n_mels × frames`, row-major); normalization
/// is applied inside. `out` must hold `fa_model_embedding_dim` values.
///
/// # Safety
/// Pointers must reference buffers of the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn fa_model_embed(
    model: *const FaModel,
    features: *const f64,
    n_mels: usize,
    frames: usize,
    out: *mut f64,
    out_len: usize,
) -> FaStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let data = slice(features, n_mels * frames, "features")?;
        let fm = FeatureMatrix::new(Tensor::from_vec(&[n_mels, frames], data.to_vec())?);
        let emb = model.0.embed(&fm)?;
        if out_len != emb.len() {
            return Err(Fail(FaStatus::Dimension, format!("out_len {out_len} != embedding size {}", emb.len())));
        }
        slice_mut(out, out_len, "out")?.copy_from_slice(&emb);
        Ok(())
    })
}

/// Cosine similarity of two vectors of length `len`.
///
/// # Safety
/// `a` and `b` must hold `len` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fa_cosine_score(a: *const f64, b: *const f64, len: usize, out: *mut f64) -> FaStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = freqattn::eval::cosine_score(slice(a, len, "a")?, slice(b, len, "b")?)?;
        Ok(())
    })
}

/// EER (fraction) and minDCF at p_target 0.05 for `n` scores; a nonzero
/// label marks a target trial.
///
/// # Safety
/// `scores` and `labels` must hold `n` values; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn fa_compute_metrics(
    scores: *const f64,
    labels: *const u8,
    n: usize,
    eer: *mut f64,
    min_dcf: *mut f64,
) -> FaStatus {
    guard(|| {
        let eer = out_ref(eer, "eer")?;
        let min_dcf = out_ref(min_dcf, "min_dcf")?;
        let scores = slice(scores, n, "scores")?;
        if n > 0 && labels.is_null() {
            return Err(null("labels"));
        }
        let labels = if n == 0 { &[][..] } else { std::slice::from_raw_parts(labels, n) };
        let (mut tar, mut non) = (Vec::new(), Vec::new());
        for (&s, &l) in scores.iter().zip(labels) {
            if l != 0 { tar.push(s) } else { non.push(s) }
        }
        let m = evaluate(&tar, &non, &DcfParams::default())?;
        *eer = m.eer;
        *min_dcf = m.min_dcf;
        Ok(())
    })
}

/// Log-mel features of mono samples in `[-1, 1]` with the default front end
/// (64 mels, 25 ms frames, 10 ms shift, 512-point FFT).
///
/// # Safety
/// `samples` must hold `n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fa_extract_features(
    samples: *const f64,
    n: usize,
    sample_rate: u32,
    out: *mut *mut FaFeatures,
) -> FaStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let wave = Waveform::new(slice(samples, n, "samples")?.to_vec(), sample_rate)?;
        let fm = logmel(&wave, &MelConfig::default())?;
        *out = Box::into_raw(Box::new(FaFeatures(fm)));
        Ok(())
    })
}

/// # Safety
/// `features` must be a live handle; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn fa_features_shape(features: *const FaFeatures, n_mels: *mut usize, frames: *mut usize) -> FaStatus {
    guard(|| {
        let f = features.as_ref().ok_or_else(|| null("features"))?;
        *out_ref(n_mels, "n_mels")? = f.0.n_mels();
        *out_ref(frames, "frames")? = f.0.frames();
        Ok(())
    })
}

/// Row-major values, valid while the handle lives. NULL for a NULL handle.
///
/// # Safety
/// `features` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fa_features_data(features: *const FaFeatures) -> *const f64 {
    features.as_ref().map_or(ptr::null(), |f| f.0.values.data().as_ptr())
}

/// # Safety
/// `features` must come from [`fa_extract_features`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn fa_features_free(features: *mut FaFeatures) {
    if !features.is_null() {
        drop(Box::from_raw(features));
    }
}

/// Builds an attention block for `channels` channels whose frequency
/// components are the `k` lowest of a `rows × cols` map. `k` is ignored for
/// SE. Weights are drawn from `seed`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn fa_attention_new(
    variant: FaVariant,
    aggregation: FaAggregation,
    channels: usize,
    reduction: usize,
    k: usize,
    rows: usize,
    cols: usize,
    seed: u64,
    out: *mut *mut FaAttention,
) -> FaStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let variant = match variant {
            FaVariant::Se => Variant::Se,
            FaVariant::Sfsc => Variant::Sfsc,
            FaVariant::Mfsc => Variant::Mfsc,
        };
        let aggregation = match aggregation {
            FaAggregation::Avg => Aggregation::Avg,
            FaAggregation::Max => Aggregation::Max,
            FaAggregation::AvgMax => Aggregation::AvgMax,
        };
        let indices = match variant {
            Variant::Se => Vec::new(),
            _ => select_frequency_indices(rows, cols, k, SelectionStrategy::ZigzagLowFirst)?,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let block = AttentionBlock::new("att", variant, channels, reduction, indices, aggregation, &mut rng)?;
        *out = Box::into_raw(Box::new(FaAttention(block)));
        Ok(())
    })
}

/// Trainable parameter count of the block, 0 for NULL.
///
/// # Safety
/// `block` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fa_attention_param_count(block: *const FaAttention) -> usize {
    block.as_ref().map_or(0, |b| b.0.param_count())
}

/// Applies the block to `x[C×F×T]`. Writes the `C` channel weights to
/// `scale` and the rescaled map to `y`; either output may be NULL.
///
/// # Safety
/// `x` must hold `c·f·t` values, `scale` `c` values and `y` `c·f·t` values.
#[no_mangle]
pub unsafe extern "C" fn fa_attention_forward(
    block: *const FaAttention,
    x: *const f64,
    c: usize,
    f: usize,
    t: usize,
    scale: *mut f64,
    y: *mut f64,
) -> FaStatus {
    guard(|| {
        let block = block.as_ref().ok_or_else(|| null("block"))?;
        let input = Tensor::from_vec(&[c, f, t], slice(x, c * f * t, "x")?.to_vec())?;
        let res = block.0.forward(&input)?;
        if !scale.is_null() {
            slice_mut(scale, c, "scale")?.copy_from_slice(res.s.data());
        }
        if !y.is_null() {
            slice_mut(y, c * f * t, "y")?.copy_from_slice(res.y.data());
        }
        Ok(())
    })
}

/// # Safety
/// `block` must come from [`fa_attention_new`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn fa_attention_free(block: *mut FaAttention) {
    if !block.is_null() {
        drop(Box::from_raw(block));
    }
}
