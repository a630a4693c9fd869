//! C ABI over `ksp-core`.
//!
//! Every function returns a [`KspStatus`]; on failure the message is available
//! from [`ksp_last_error_message`] on the same thread. Objects handed out are
//! opaque and must be released with their matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};

use ksp_core::detection::{evaluate, load_external_detections, load_ground_truth, EvaluationConfig, MetricsDocument};
use ksp_core::metrics::{nmse, ssim, SsimParams};
use ksp_core::model::MagnitudeImage;
use ksp_core::pipeline::{build_chain, ChainConfig, ChainInput};
use ksp_core::sampling::{generate_mask, MaskPolicy};
use ksp_core::wire::{decode_stream, encode_message, GadgetMessage};

/// Result of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KspStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Protocol = 4,
    Runtime = 5,
    Panic = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

struct Failure(KspStatus, String);

fn fail<T>(status: KspStatus, message: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(status, message.into()))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> KspStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => KspStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic");
            KspStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return fail(KspStatus::NullPointer, format!("{name} is null"));
    }
    CStr::from_ptr(p)
        .to_str()
        .or_else(|_| fail(KspStatus::InvalidArgument, format!("{name} is not UTF-8")))
}

unsafe fn out_string(out: *mut *mut c_char, text: String) -> Result<(), Failure> {
    let c = CString::new(text).or_else(|_| fail(KspStatus::Runtime, "output contains NUL"))?;
    *out = c.into_raw();
    Ok(())
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length, or 0 if none.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn ksp_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| match &*e.borrow() {
        None => 0,
        Some(msg) => {
            let bytes = msg.as_bytes();
            if !buf.is_null() && len > 0 {
                let n = bytes.len().min(len - 1);
                ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, n);
                *buf.add(n) = 0;
            }
            bytes.len()
        }
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ksp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must be null or a string obtained from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ksp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Byte buffer owned by the library.
#[repr(C)]
pub struct KspBuffer {
    pub data: *mut u8,
    pub len: usize,
}

fn into_buffer(bytes: Vec<u8>) -> KspBuffer {
    let boxed = bytes.into_boxed_slice();
    let len = boxed.len();
    KspBuffer {
        data: Box::into_raw(boxed) as *mut u8,
        len,
    }
}

/// Releases a buffer's contents and resets it to empty.
///
/// # Safety
/// `buf` must be null or point to a buffer filled by this library.
#[no_mangle]
pub unsafe extern "C" fn ksp_buffer_free(buf: *mut KspBuffer) {
    if buf.is_null() || (*buf).data.is_null() {
        return;
    }
    let b = &mut *buf;
    drop(Box::from_raw(ptr::slice_from_raw_parts_mut(b.data, b.len)));
    b.data = ptr::null_mut();
    b.len = 0;
}

/// Seeded sampling mask: writes 1 for acquired lines, 0 otherwise, into
/// `out[0..num_pe]`.
///
/// # Safety
/// `out` must point to `num_pe` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn ksp_generate_mask(
    num_pe: usize,
    rate: f64,
    acs_fraction: f64,
    seed: u64,
    out: *mut u8,
) -> KspStatus {
    guard(|| {
        if out.is_null() {
            return fail(KspStatus::NullPointer, "out is null");
        }
        let policy = MaskPolicy {
            nominal_rate: rate,
            acs_fraction,
            seed,
        };
        let mask = generate_mask(num_pe, &policy).or_else(|e| fail(KspStatus::InvalidArgument, e.to_string()))?;
        let dst = slice::from_raw_parts_mut(out, num_pe);
        for (d, &a) in dst.iter_mut().zip(mask.acquired()) {
            *d = a as u8;
        }
        Ok(())
    })
}

unsafe fn image_arg(p: *const f32, rows: usize, cols: usize, name: &str) -> Result<MagnitudeImage, Failure> {
    if p.is_null() {
        return fail(KspStatus::NullPointer, format!("{name} is null"));
    }
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| Failure(KspStatus::InvalidArgument, "image too large".into()))?;
    MagnitudeImage::new(0, rows, cols, slice::from_raw_parts(p, n).to_vec())
        .or_else(|e| fail(KspStatus::InvalidArgument, format!("{name}: {e}")))
}

/// SSIM of two row-major magnitude images (7×7 window). `data_range <= 0`
/// means the reference maximum.
///
/// # Safety
/// `reference` and `test` must each point to `rows * cols` floats; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ksp_ssim(
    reference: *const f32,
    test: *const f32,
    rows: usize,
    cols: usize,
    data_range: f64,
    out: *mut f64,
) -> KspStatus {
    guard(|| {
        if out.is_null() {
            return fail(KspStatus::NullPointer, "out is null");
        }
        let r = image_arg(reference, rows, cols, "reference")?;
        let t = image_arg(test, rows, cols, "test")?;
        let p = SsimParams {
            data_range: (data_range > 0.0).then_some(data_range),
            ..SsimParams::default()
        };
        *out = ssim(&r, &t, &p).or_else(|e| fail(KspStatus::InvalidArgument, e.to_string()))?;
        Ok(())
    })
}

/// Normalized mean squared error `‖test − ref‖² / ‖ref‖²`.
///
/// # Safety
/// As for [`ksp_ssim`].
#[no_mangle]
pub unsafe extern "C" fn ksp_nmse(
    reference: *const f32,
    test: *const f32,
    rows: usize,
    cols: usize,
    out: *mut f64,
) -> KspStatus {
    guard(|| {
        if out.is_null() {
            return fail(KspStatus::NullPointer, "out is null");
        }
        let r = image_arg(reference, rows, cols, "reference")?;
        let t = image_arg(test, rows, cols, "test")?;
        *out = nmse(&r, &t).or_else(|e| fail(KspStatus::InvalidArgument, e.to_string()))?;
        Ok(())
    })
}

/// Scores a detections document against ground truth; `metrics_json` may be
/// null. The report JSON is returned in `*out` (free with [`ksp_string_free`]).
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ksp_evaluate(
    detections_json: *const c_char,
    ground_truth_json: *const c_char,
    metrics_json: *const c_char,
    iou_threshold: f64,
    out: *mut *mut c_char,
) -> KspStatus {
    guard(|| {
        if out.is_null() {
            return fail(KspStatus::NullPointer, "out is null");
        }
        let dets = load_external_detections(str_arg(detections_json, "detections_json")?)
            .or_else(|e| fail(KspStatus::Parse, e.to_string()))?;
        let gts = load_ground_truth(str_arg(ground_truth_json, "ground_truth_json")?)
            .or_else(|e| fail(KspStatus::Parse, e.to_string()))?;
        let metrics = if metrics_json.is_null() {
            None
        } else {
            Some(
                MetricsDocument::from_json(str_arg(metrics_json, "metrics_json")?)
                    .or_else(|e| fail(KspStatus::Parse, e.to_string()))?,
            )
        };
        let cfg = EvaluationConfig {
            iou_threshold,
            ..EvaluationConfig::default()
        };
        let report =
            evaluate(metrics.as_ref(), &dets, &gts, &cfg).or_else(|e| fail(KspStatus::InvalidArgument, e.to_string()))?;
        out_string(out, report.to_json())
    })
}

/// A running gadget chain. Fed wire-encoded input, it returns the
/// wire-encoded output stream on finish.
pub struct KspChain {
    input: Option<ChainInput>,
    collected: Arc<Mutex<Vec<GadgetMessage>>>,
    collector: Option<JoinHandle<()>>,
}

/// Builds and starts a chain from its JSON configuration.
///
/// # Safety
/// `config_json` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ksp_chain_new(config_json: *const c_char, out: *mut *mut KspChain) -> KspStatus {
    guard(|| {
        if out.is_null() {
            return fail(KspStatus::NullPointer, "out is null");
        }
        let cfg = ChainConfig::from_json(str_arg(config_json, "config_json")?)
            .or_else(|e| fail(KspStatus::Parse, e.to_string()))?;
        let chain = build_chain(&cfg).or_else(|e| fail(KspStatus::InvalidArgument, e.to_string()))?;
        let (input, output) = chain.start();
        let collected = Arc::new(Mutex::new(Vec::new()));
        let sink = Arc::clone(&collected);
        let collector = thread::spawn(move || {
            for item in output {
                if let Some(msg) = item.to_message() {
                    sink.lock().expect("collector lock").push(msg);
                }
            }
        });
        *out = Box::into_raw(Box::new(KspChain {
            input: Some(input),
            collected,
            collector: Some(collector),
        }));
        Ok(())
    })
}

/// Feeds wire-encoded messages (any number, whole messages only). A Close
/// message ends the input.
///
/// # Safety
/// `chain` must come from [`ksp_chain_new`]; `bytes` must point to `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn ksp_chain_push(chain: *mut KspChain, bytes: *const u8, len: usize) -> KspStatus {
    guard(|| {
        if chain.is_null() || (bytes.is_null() && len > 0) {
            return fail(KspStatus::NullPointer, "chain or bytes is null");
        }
        let chain = &mut *chain;
        let data = if len == 0 { &[][..] } else { slice::from_raw_parts(bytes, len) };
        let messages = decode_stream(data).or_else(|e| fail(KspStatus::Protocol, e.to_string()))?;
        for msg in messages {
            let Some(input) = &chain.input else {
                return fail(KspStatus::Protocol, "input already closed");
            };
            if msg == GadgetMessage::Close {
                chain.input = None;
                continue;
            }
            if input.send(msg).is_err() {
                chain.input = None;
                return fail(KspStatus::Runtime, "chain stopped; its report carries the error");
            }
        }
        Ok(())
    })
}

/// Ends the input, waits for the chain, and returns every output message
/// followed by Close, wire-encoded, in `*out` (free with [`ksp_buffer_free`]).
///
/// # Safety
/// `chain` must come from [`ksp_chain_new`]; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ksp_chain_finish(chain: *mut KspChain, out: *mut KspBuffer) -> KspStatus {
    guard(|| {
        if chain.is_null() || out.is_null() {
            return fail(KspStatus::NullPointer, "chain or out is null");
        }
        let chain = &mut *chain;
        chain.input = None;
        if let Some(h) = chain.collector.take() {
            h.join().or_else(|_| fail(KspStatus::Panic, "chain collector panicked"))?;
        }
        let messages = std::mem::take(&mut *chain.collected.lock().expect("collector lock"));
        let mut bytes: Vec<u8> = messages.iter().flat_map(encode_message).collect();
        bytes.extend(encode_message(&GadgetMessage::Close));
        *out = into_buffer(bytes);
        Ok(())
    })
}

/// Destroys a chain, finishing it first if needed.
///
/// # Safety
/// `chain` must be null or come from [`ksp_chain_new`], not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ksp_chain_free(chain: *mut KspChain) {
    if chain.is_null() {
        return;
    }
    let mut chain = Box::from_raw(chain);
    chain.input = None;
    if let Some(h) = chain.collector.take() {
        let _ = h.join();
    }
}
