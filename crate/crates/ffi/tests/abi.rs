use std::ffi::{c_char, CStr, CString};
use std::ptr;

use ksp_core::dataset::dataset_messages;
use ksp_core::model::SamplingMask;
use ksp_core::phantom::{simulate_volume, PhantomSet};
use ksp_core::pipeline::{ChainConfig, DetectConfig, MaskSource, ReconConfig, ReconMethod, ReportConfig};
use ksp_core::recon::CgConfig;
use ksp_core::sampling::{generate_mask, MaskPolicy};
use ksp_core::wire::{decode_stream, encode_message, GadgetMessage};
use ksp_ffi::*;

fn last_error() -> String {
    let mut buf = [0 as c_char; 256];
    let n = unsafe { ksp_last_error_message(buf.as_mut_ptr(), buf.len()) };
    assert!(n > 0);
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(ksp_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn mask_matches_the_library() {
    let mut out = vec![9u8; 64];
    let status = unsafe { ksp_generate_mask(64, 4.0, 0.08, 42, out.as_mut_ptr()) };
    assert_eq!(status, KspStatus::Ok);
    let expected = generate_mask(
        64,
        &MaskPolicy {
            nominal_rate: 4.0,
            acs_fraction: 0.08,
            seed: 42,
        },
    )
    .unwrap();
    let got: Vec<bool> = out.iter().map(|&b| b == 1).collect();
    assert_eq!(got, expected.acquired());

    let status = unsafe { ksp_generate_mask(64, 0.5, 0.08, 42, out.as_mut_ptr()) };
    assert_eq!(status, KspStatus::InvalidArgument);
    assert!(!last_error().is_empty());
    let status = unsafe { ksp_generate_mask(64, 4.0, 0.08, 42, ptr::null_mut()) };
    assert_eq!(status, KspStatus::NullPointer);
}

#[test]
fn ssim_and_nmse() {
    let a = vec![1.0f32; 100];
    let b = vec![0.5f32; 100];
    let mut v = 0.0;
    let status = unsafe { ksp_ssim(a.as_ptr(), b.as_ptr(), 10, 10, 1.0, &mut v) };
    assert_eq!(status, KspStatus::Ok);
    assert!((v - 1.0001 / 1.2501).abs() < 1e-9);
    let status = unsafe { ksp_nmse(a.as_ptr(), b.as_ptr(), 10, 10, &mut v) };
    assert_eq!(status, KspStatus::Ok);
    assert!((v - 0.25).abs() < 1e-12);
    let status = unsafe { ksp_ssim(a.as_ptr(), b.as_ptr(), 0, 10, 1.0, &mut v) };
    assert_ne!(status, KspStatus::Ok);
}

#[test]
fn evaluate_returns_a_report() {
    let pred = CString::new(r#"[{"slice":0,"x0":1,"y0":1,"x1":5,"y1":5,"confidence":0.9}]"#).unwrap();
    let gt = CString::new(r#"[{"slice":0,"x0":1,"y0":1,"x1":5,"y1":5},{"slice":1,"x0":1,"y0":1,"x1":5,"y1":5}]"#)
        .unwrap();
    let mut out: *mut c_char = ptr::null_mut();
    let status = unsafe { ksp_evaluate(pred.as_ptr(), gt.as_ptr(), ptr::null(), 0.5, &mut out) };
    assert_eq!(status, KspStatus::Ok);
    let text = unsafe { CStr::from_ptr(out) }.to_str().unwrap().to_owned();
    unsafe { ksp_string_free(out) };
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["tp"], 1);
    assert_eq!(v["fn"], 1);

    let bad = CString::new("{").unwrap();
    let status = unsafe { ksp_evaluate(bad.as_ptr(), gt.as_ptr(), ptr::null(), 0.5, &mut out) };
    assert_eq!(status, KspStatus::Parse);
    assert!(last_error().contains("line"));
}

fn dataset_bytes() -> Vec<u8> {
    let set = PhantomSet {
        size: 32,
        coils: 2,
        slices: 2,
        lesions: 1,
        ellipses: 1,
        ..PhantomSet::default()
    };
    let vol = simulate_volume(&set).unwrap();
    let slices: Vec<_> = vol.kspace.into_iter().map(|k| (k, SamplingMask::full(32))).collect();
    dataset_messages(&slices).unwrap().iter().flat_map(encode_message).collect()
}

fn chain_json() -> CString {
    let cfg = ChainConfig::standard(
        ReconConfig {
            method: ReconMethod::ZeroFill,
            cg: CgConfig::default(),
            mask: MaskSource::Stream,
            image_dir: None,
        },
        DetectConfig::blob(),
        ReportConfig::default(),
    );
    CString::new(cfg.to_json()).unwrap()
}

#[test]
fn chain_session() {
    let mut chain: *mut KspChain = ptr::null_mut();
    assert_eq!(unsafe { ksp_chain_new(chain_json().as_ptr(), &mut chain) }, KspStatus::Ok);
    let bytes = dataset_bytes();
    // Feed in two pieces split on a message boundary.
    let first = encode_message(&decode_stream(&bytes).unwrap()[0]).len();
    assert_eq!(unsafe { ksp_chain_push(chain, bytes.as_ptr(), first) }, KspStatus::Ok);
    assert_eq!(
        unsafe { ksp_chain_push(chain, bytes[first..].as_ptr(), bytes.len() - first) },
        KspStatus::Ok
    );
    let mut buf = KspBuffer {
        data: ptr::null_mut(),
        len: 0,
    };
    assert_eq!(unsafe { ksp_chain_finish(chain, &mut buf) }, KspStatus::Ok);
    let out = decode_stream(unsafe { std::slice::from_raw_parts(buf.data, buf.len) }).unwrap();
    unsafe {
        ksp_buffer_free(&mut buf);
        ksp_chain_free(chain);
    }
    assert!(buf.data.is_null());
    let kinds: Vec<&str> = out.iter().map(|m| m.kind()).collect();
    assert_eq!(kinds, ["image", "annotations", "image", "annotations", "report", "close"]);
}

#[test]
fn chain_rejects_bad_input() {
    let bad = CString::new(r#"{"gadgets":[]}"#).unwrap();
    let mut chain: *mut KspChain = ptr::null_mut();
    assert_eq!(unsafe { ksp_chain_new(bad.as_ptr(), &mut chain) }, KspStatus::InvalidArgument);
    assert!(chain.is_null());

    assert_eq!(unsafe { ksp_chain_new(chain_json().as_ptr(), &mut chain) }, KspStatus::Ok);
    let truncated = &encode_message(&GadgetMessage::Config("{}".into()))[..4];
    assert_eq!(
        unsafe { ksp_chain_push(chain, truncated.as_ptr(), truncated.len()) },
        KspStatus::Protocol
    );
    // Freeing without finishing must not hang or leak threads.
    unsafe { ksp_chain_free(chain) };
    unsafe { ksp_chain_free(ptr::null_mut()) };
}
