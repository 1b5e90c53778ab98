//! C ABI for the segmentation model.
//!
//! Other languages load a trained checkpoint, run frame-pair inference,
//! and score prediction/ground-truth map pairs. Handles are opaque;
//! every function returns a status from [`VidsegStatus`] (or null on a
//! failed constructor). Buffers cross the boundary as raw pointers with
//! explicit extents, RGB interleaved row-major for frames, row-major f64
//! for maps.
//!
//! The generated header lands in `include/vidseg.h` at build time.

use std::ffi::{c_char, CStr};
use std::path::Path;
use std::ptr;

use vidseg::data::FramePair;
use vidseg::metrics::{self, DiceMode};
use vidseg::model::{load_network, CheckpointMeta, Network};
use vidseg::params::ParamStore;
use vidseg::tensor::Tensor;

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VidsegStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    LoadFailed = 3,
    BadDimensions = 4,
    NumericFailure = 5,
    InvalidInput = 6,
}

/// Opaque model handle: a loaded network plus its parameters.
pub struct VidsegModel {
    net: Network,
    store: ParamStore,
    meta: CheckpointMeta,
}

/// Scalar metric bundle for one prediction/ground-truth pair. Metrics that
/// are undefined for the pair (empty ground truth) come back as NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct VidsegMetrics {
    pub dice: f64,
    pub f_mean: f64,
    pub f_weighted: f64,
    pub sensitivity: f64,
    pub s_measure: f64,
    pub e_mean: f64,
}

/// Static description of a status code.
#[no_mangle]
pub extern "C" fn vidseg_status_message(status: VidsegStatus) -> *const c_char {
    let msg: &'static [u8] = match status {
        VidsegStatus::Ok => b"ok\0",
        VidsegStatus::NullArgument => b"null argument\0",
        VidsegStatus::InvalidUtf8 => b"path is not valid UTF-8\0",
        VidsegStatus::LoadFailed => b"checkpoint load failed\0",
        VidsegStatus::BadDimensions => b"buffer extents do not match the model\0",
        VidsegStatus::NumericFailure => b"forward pass failed\0",
        VidsegStatus::InvalidInput => b"invalid input values\0",
    };
    msg.as_ptr() as *const c_char
}

/// Library version string (static).
#[no_mangle]
pub extern "C" fn vidseg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Loads a checkpoint by its base path (the `.ckpt`/`.json` pair written
/// by training, extension omitted). Returns null on failure; `status_out`
/// (optional) receives the reason.
///
/// # Safety
/// `path` must be a valid NUL-terminated string; `status_out`, when
/// non-null, must point to writable memory.
#[no_mangle]
pub unsafe extern "C" fn vidseg_model_load(
    path: *const c_char,
    status_out: *mut VidsegStatus,
) -> *mut VidsegModel {
    let set = |s: VidsegStatus| {
        if !status_out.is_null() {
            unsafe { *status_out = s };
        }
    };
    if path.is_null() {
        set(VidsegStatus::NullArgument);
        return ptr::null_mut();
    }
    let Ok(path) = unsafe { CStr::from_ptr(path) }.to_str() else {
        set(VidsegStatus::InvalidUtf8);
        return ptr::null_mut();
    };
    match load_network(Path::new(path)) {
        Ok((net, store, meta)) => {
            set(VidsegStatus::Ok);
            Box::into_raw(Box::new(VidsegModel { net, store, meta }))
        }
        Err(_) => {
            set(VidsegStatus::LoadFailed);
            ptr::null_mut()
        }
    }
}

/// Frees a model handle. Null is a no-op.
///
/// # Safety
/// `model` must have come from `vidseg_model_load` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn vidseg_model_free(model: *mut VidsegModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// The square input resolution the model was trained at.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vidseg_model_resolution(
    model: *const VidsegModel,
    out: *mut usize,
) -> VidsegStatus {
    if model.is_null() || out.is_null() {
        return VidsegStatus::NullArgument;
    }
    unsafe { *out = (*model).meta.arch.resolution };
    VidsegStatus::Ok
}

fn rgb_to_tensor(rgb: &[u8], res: usize) -> Tensor {
    let mut data = vec![0.0; 3 * res * res];
    for p in 0..res * res {
        for c in 0..3 {
            data[c * res * res + p] = rgb[p * 3 + c] as f64 / 255.0;
        }
    }
    Tensor::new(vec![3, res, res], data).expect("frame extents")
}

/// Segments an anchor frame given its reference frame. Both frames are
/// 8-bit RGB, interleaved, row-major, `resolution × resolution` (see
/// `vidseg_model_resolution`). Writes `resolution²` anchor-frame
/// foreground probabilities to `out_prob`.
///
/// # Safety
/// `anchor_rgb` and `reference_rgb` must hold `3·resolution²` bytes;
/// `out_prob` must hold `resolution²` doubles.
#[no_mangle]
pub unsafe extern "C" fn vidseg_model_predict(
    model: *const VidsegModel,
    anchor_rgb: *const u8,
    reference_rgb: *const u8,
    height: usize,
    width: usize,
    out_prob: *mut f64,
) -> VidsegStatus {
    if model.is_null() || anchor_rgb.is_null() || reference_rgb.is_null() || out_prob.is_null() {
        return VidsegStatus::NullArgument;
    }
    let model = unsafe { &*model };
    let res = model.meta.arch.resolution;
    if height != res || width != res {
        return VidsegStatus::BadDimensions;
    }
    let n = res * res;
    let anchor = unsafe { std::slice::from_raw_parts(anchor_rgb, 3 * n) };
    let reference = unsafe { std::slice::from_raw_parts(reference_rgb, 3 * n) };
    let pair = FramePair {
        anchor: rgb_to_tensor(anchor, res),
        reference: rgb_to_tensor(reference, res),
        anchor_mask: Tensor::zeros(&[1, res, res]),
        reference_mask: Tensor::zeros(&[1, res, res]),
        t_anchor: 1,
        t_reference: 0,
    };
    match model.net.predict_pair(&model.store, &pair) {
        Ok((map, _)) => {
            let out = unsafe { std::slice::from_raw_parts_mut(out_prob, n) };
            out.copy_from_slice(map.data());
            VidsegStatus::Ok
        }
        Err(_) => VidsegStatus::NumericFailure,
    }
}

/// Scores one prediction map (f64 in [0,1], row-major) against a binary
/// ground truth (one byte per pixel, nonzero = foreground). Undefined
/// metrics (empty ground truth) come back as NaN.
///
/// # Safety
/// `pred` must hold `height·width` doubles, `gt` as many bytes, and `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn vidseg_evaluate_pair(
    pred: *const f64,
    gt: *const u8,
    height: usize,
    width: usize,
    out: *mut VidsegMetrics,
) -> VidsegStatus {
    if pred.is_null() || gt.is_null() || out.is_null() {
        return VidsegStatus::NullArgument;
    }
    if height == 0 || width == 0 {
        return VidsegStatus::BadDimensions;
    }
    let n = height * width;
    let pred = unsafe { std::slice::from_raw_parts(pred, n) };
    let gt = unsafe { std::slice::from_raw_parts(gt, n) };
    let Ok(pred_t) = Tensor::new(vec![height, width], pred.to_vec()) else {
        return VidsegStatus::BadDimensions;
    };
    let gt_t = Tensor::new(
        vec![height, width],
        gt.iter().map(|&b| (b != 0) as u8 as f64).collect(),
    )
    .expect("same extents");
    match metrics::evaluate_frame(&pred_t, &gt_t, DiceMode::Fixed) {
        Ok(m) => {
            unsafe {
                *out = VidsegMetrics {
                    dice: m.dice,
                    f_mean: m.f_mean,
                    f_weighted: m.f_weighted.unwrap_or(f64::NAN),
                    sensitivity: m.sensitivity.unwrap_or(f64::NAN),
                    s_measure: m.s_measure,
                    e_mean: m.e_mean,
                };
            }
            VidsegStatus::Ok
        }
        Err(_) => VidsegStatus::InvalidInput,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ffi::CString;
    use vidseg::model::{save_checkpoint, ModelConfig, Network};

    fn temp_checkpoint() -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("vidseg_ffi_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let cfg = ModelConfig { resolution: 32, ..Default::default() };
        let (_, store) = Network::init(&cfg, 3).unwrap();
        let meta = CheckpointMeta {
            arch: cfg,
            config_hash: "test".into(),
            epoch: 0,
            best_dice: 0.0,
            param_count: store.total_len(),
        };
        let base = dir.join("model");
        save_checkpoint(&base, &store, &meta, None).unwrap();
        base
    }

    #[test]
    fn load_predict_evaluate_free() {
        let base = temp_checkpoint();
        let path = CString::new(base.to_str().unwrap()).unwrap();
        let mut status = VidsegStatus::Ok;
        let model = unsafe { vidseg_model_load(path.as_ptr(), &mut status) };
        assert_eq!(status, VidsegStatus::Ok);
        assert!(!model.is_null());

        let mut res = 0usize;
        assert_eq!(unsafe { vidseg_model_resolution(model, &mut res) }, VidsegStatus::Ok);
        assert_eq!(res, 32);

        let anchor = vec![128u8; 3 * res * res];
        let reference = vec![96u8; 3 * res * res];
        let mut prob = vec![0.0f64; res * res];
        let status = unsafe {
            vidseg_model_predict(
                model,
                anchor.as_ptr(),
                reference.as_ptr(),
                res,
                res,
                prob.as_mut_ptr(),
            )
        };
        assert_eq!(status, VidsegStatus::Ok);
        assert!(prob.iter().all(|&p| (0.0..=1.0).contains(&p)));

        // Wrong extents are rejected.
        let status = unsafe {
            vidseg_model_predict(model, anchor.as_ptr(), reference.as_ptr(), 16, 16, prob.as_mut_ptr())
        };
        assert_eq!(status, VidsegStatus::BadDimensions);

        let gt: Vec<u8> = (0..res * res).map(|i| (i < res * res / 2) as u8).collect();
        let mut m = VidsegMetrics {
            dice: 0.0,
            f_mean: 0.0,
            f_weighted: 0.0,
            sensitivity: 0.0,
            s_measure: 0.0,
            e_mean: 0.0,
        };
        let status = unsafe { vidseg_evaluate_pair(prob.as_ptr(), gt.as_ptr(), res, res, &mut m) };
        assert_eq!(status, VidsegStatus::Ok);
        assert!((0.0..=1.0).contains(&m.dice));
        assert!((0.0..=1.0).contains(&m.s_measure));

        unsafe { vidseg_model_free(model) };
    }

    #[test]
    fn null_and_bad_paths_are_reported() {
        let mut status = VidsegStatus::Ok;
        let model = unsafe { vidseg_model_load(std::ptr::null(), &mut status) };
        assert!(model.is_null());
        assert_eq!(status, VidsegStatus::NullArgument);

        let path = CString::new("/nonexistent/checkpoint").unwrap();
        let model = unsafe { vidseg_model_load(path.as_ptr(), &mut status) };
        assert!(model.is_null());
        assert_eq!(status, VidsegStatus::LoadFailed);

        unsafe { vidseg_model_free(std::ptr::null_mut()) };
    }

    #[test]
    fn header_is_generated() {
        let header = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("include/vidseg.h");
        let text = std::fs::read_to_string(header).unwrap();
        assert!(text.contains("vidseg_model_load"));
        assert!(text.contains("VidsegStatus"));
        assert!(text.contains("vidseg_evaluate_pair"));
    }
}
