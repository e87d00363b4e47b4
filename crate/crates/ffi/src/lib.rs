//! C interface to the codec and the enhancement network.
//!
//! All objects are opaque handles created by a `crds_*` constructor and
//! released with the matching `*_free`. Functions return a [`CrdsStatus`];
//! after a failure `crds_last_error` describes it for the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use crds_core::media_io::{delta_metrics, load_clip, save_clip, Colorspace, Fps, RawClip};
use crds_core::nn::ParamStore;
use crds_core::noise_model::uniformity_stats;
use crds_core::pdis_net::{crds_forward, Crds};
use crds_core::toy_codec::{encode_clip, noise_samples, CodecConfig, CodecMetadata};
use crds_core::train_harness::{build_model, CheckpointState, TrainConfig};
use crds_core::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CrdsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Io = 3,
    Format = 4,
    Checkpoint = 5,
    Internal = 6,
    Panic = 7,
}

/// A decoded clip of 8-bit frames.
pub struct CrdsClip(RawClip);

/// Codec side information of one encoded clip.
pub struct CrdsCodecMeta(CodecMetadata);

/// An enhancement network with its weights.
pub struct CrdsModel {
    model: Crds,
    store: ParamStore,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct CrdsClipInfo {
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct CrdsNoiseStats {
    pub count: usize,
    pub qstep: f64,
    pub mean: f64,
    pub variance: f64,
    pub uniform_variance: f64,
    pub max_abs: f64,
    pub ks_distance: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> CrdsStatus {
    match e {
        Error::Io { .. } => CrdsStatus::Io,
        Error::Format(_) | Error::Corrupt(_) | Error::Json(_) | Error::Image(_) => CrdsStatus::Format,
        Error::InvalidInput(_) | Error::Shape(_) => CrdsStatus::InvalidInput,
        Error::Manifest(_) => CrdsStatus::Checkpoint,
        Error::Diverged { .. } => CrdsStatus::Internal,
    }
}

enum Fail {
    Null(&'static str),
    Core(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> CrdsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            CrdsStatus::Ok
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(&format!("null pointer: {what}"));
            CrdsStatus::NullPointer
        }
        Ok(Err(Fail::Core(e))) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic");
            CrdsStatus::Panic
        }
    }
}

unsafe fn href<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or(Fail::Null(what))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(Fail::Null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Error::InvalidInput("path is not valid UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

/// Message of the last failed call on this thread; empty after a success.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn crds_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn crds_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Load a clip file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn crds_clip_load(path: *const c_char, out: *mut *mut CrdsClip) -> CrdsStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = boxed(CrdsClip(load_clip(path_arg(path)?)?));
        Ok(())
    })
}

/// Build a clip from `frames` planar 8-bit frames stored back to back
/// (`channels × height × width` bytes each). `channels` is 1 or 3.
///
/// # Safety
/// `data` must point to `frames·channels·height·width` readable bytes.
#[no_mangle]
pub unsafe extern "C" fn crds_clip_from_u8(
    data: *const u8,
    frames: usize,
    channels: usize,
    height: usize,
    width: usize,
    out: *mut *mut CrdsClip,
) -> CrdsStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        if data.is_null() {
            return Err(Fail::Null("data"));
        }
        let cs = Colorspace::from_channels(channels)?;
        let plane = channels * height * width;
        let bytes = std::slice::from_raw_parts(data, frames * plane);
        let fs = if plane == 0 {
            Vec::new()
        } else {
            bytes.chunks(plane).map(<[u8]>::to_vec).collect()
        };
        *out = boxed(CrdsClip(RawClip::new(fs, height, width, cs, Fps::default())?));
        Ok(())
    })
}

/// # Safety
/// `clip` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn crds_clip_save(clip: *const CrdsClip, path: *const c_char) -> CrdsStatus {
    guard(|| {
        let c = href(clip, "clip")?;
        save_clip(&c.0, path_arg(path)?)?;
        Ok(())
    })
}

/// # Safety
/// `clip` must be a live handle and `info` writable.
#[no_mangle]
pub unsafe extern "C" fn crds_clip_info(clip: *const CrdsClip, info: *mut CrdsClipInfo) -> CrdsStatus {
    guard(|| {
        let c = &href(clip, "clip")?.0;
        *out_ptr(info, "info")? = CrdsClipInfo {
            frames: c.frame_count(),
            channels: c.channels(),
            height: c.height(),
            width: c.width(),
        };
        Ok(())
    })
}

/// Copy frame `index` into `buf`, which must hold `channels·height·width` bytes.
///
/// # Safety
/// `clip` must be a live handle and `buf` writable for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn crds_clip_frame(clip: *const CrdsClip, index: usize, buf: *mut u8, len: usize) -> CrdsStatus {
    guard(|| {
        let c = &href(clip, "clip")?.0;
        if buf.is_null() {
            return Err(Fail::Null("buf"));
        }
        let f = c
            .frames()
            .get(index)
            .ok_or_else(|| Error::InvalidInput(format!("frame {index} out of range")))?;
        if len < f.len() {
            return Err(Error::InvalidInput(format!("buffer of {len} bytes, frame needs {}", f.len())).into());
        }
        ptr::copy_nonoverlapping(f.as_ptr(), buf, f.len());
        Ok(())
    })
}

/// # Safety
/// `clip` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn crds_clip_free(clip: *mut CrdsClip) {
    if !clip.is_null() {
        drop(Box::from_raw(clip));
    }
}

/// Encode and decode `clip` with the toy codec. `block` and `range` of 0
/// select the defaults.
///
/// # Safety
/// `clip` must be a live handle; `out_lq` and `out_meta` writable.
#[no_mangle]
pub unsafe extern "C" fn crds_codec_encode(
    clip: *const CrdsClip,
    qp: u32,
    block: usize,
    range: usize,
    out_lq: *mut *mut CrdsClip,
    out_meta: *mut *mut CrdsCodecMeta,
) -> CrdsStatus {
    guard(|| {
        let c = &href(clip, "clip")?.0;
        let out_lq = out_ptr(out_lq, "out_lq")?;
        let out_meta = out_ptr(out_meta, "out_meta")?;
        let d = CodecConfig::default();
        let cfg = CodecConfig {
            qp,
            block: if block == 0 { d.block } else { block },
            search_range: if range == 0 { d.search_range } else { range },
            ..d
        };
        let (lq, meta) = encode_clip(c, &cfg)?;
        *out_lq = boxed(CrdsClip(lq));
        *out_meta = boxed(CrdsCodecMeta(meta));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn crds_meta_load(path: *const c_char, out: *mut *mut CrdsCodecMeta) -> CrdsStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = boxed(CrdsCodecMeta(CodecMetadata::load(&path_arg(path)?)?));
        Ok(())
    })
}

/// Writes `path` (JSON) and a sibling `.bin` coefficient blob.
///
/// # Safety
/// `meta` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn crds_meta_save(meta: *const CrdsCodecMeta, path: *const c_char) -> CrdsStatus {
    guard(|| {
        href(meta, "meta")?.0.save(&path_arg(path)?)?;
        Ok(())
    })
}

/// Quantization-noise statistics of the coded residual coefficients.
///
/// # Safety
/// `meta` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn crds_meta_noise_stats(meta: *const CrdsCodecMeta, out: *mut CrdsNoiseStats) -> CrdsStatus {
    guard(|| {
        let m = &href(meta, "meta")?.0;
        let out = out_ptr(out, "out")?;
        let s = uniformity_stats(&noise_samples(m)?, m.qstep)?;
        *out = CrdsNoiseStats {
            count: s.count,
            qstep: s.qstep,
            mean: s.mean,
            variance: s.variance,
            uniform_variance: s.uniform_variance,
            max_abs: s.max_abs,
            ks_distance: s.ks_distance,
        };
        Ok(())
    })
}

/// # Safety
/// `meta` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn crds_meta_free(meta: *mut CrdsCodecMeta) {
    if !meta.is_null() {
        drop(Box::from_raw(meta));
    }
}

/// Load a training checkpoint directory.
///
/// # Safety
/// `dir` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn crds_model_load(dir: *const c_char, out: *mut *mut CrdsModel) -> CrdsStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let (model, store) = CheckpointState::load(&path_arg(dir)?)?.model()?;
        *out = boxed(CrdsModel { model, store });
        Ok(())
    })
}

/// A freshly initialised network of the named preset (`desk`, `tiny` or
/// `full`); it returns its input unchanged.
///
/// # Safety
/// `preset` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn crds_model_new(preset: *const c_char, out: *mut *mut CrdsModel) -> CrdsStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        if preset.is_null() {
            return Err(Fail::Null("preset"));
        }
        let name = CStr::from_ptr(preset).to_string_lossy();
        let (model, store) = build_model(&TrainConfig::preset(&name)?)?;
        *out = boxed(CrdsModel { model, store });
        Ok(())
    })
}

/// Enhance a compressed clip.
///
/// # Safety
/// `model` and `lq` must be live handles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn crds_model_enhance(
    model: *const CrdsModel,
    lq: *const CrdsClip,
    out: *mut *mut CrdsClip,
) -> CrdsStatus {
    guard(|| {
        let m = href(model, "model")?;
        let lq = &href(lq, "lq")?.0;
        let out = out_ptr(out, "out")?;
        let (enhanced, _) = crds_forward(&m.store, &m.model, lq, false)?;
        *out = boxed(CrdsClip(enhanced));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn crds_model_free(model: *mut CrdsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Mean PSNR and SSIM gains of `enhanced` over `lq`, both against `gt`.
///
/// # Safety
/// The clips must be live handles; the outputs writable.
#[no_mangle]
pub unsafe extern "C" fn crds_delta_metrics(
    enhanced: *const CrdsClip,
    lq: *const CrdsClip,
    gt: *const CrdsClip,
    delta_psnr: *mut f64,
    delta_ssim: *mut f64,
) -> CrdsStatus {
    guard(|| {
        let r = delta_metrics(&href(enhanced, "enhanced")?.0, &href(lq, "lq")?.0, &href(gt, "gt")?.0)?;
        *out_ptr(delta_psnr, "delta_psnr")? = r.delta_psnr;
        *out_ptr(delta_ssim, "delta_ssim")? = r.delta_ssim;
        Ok(())
    })
}
