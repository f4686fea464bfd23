use std::ffi::{CStr, CString};
use std::ptr;

use hyperinr::hypernet::{EncoderConfig, HyperNetModel, ModelConfig};
use hyperinr::inr::{make_grid, TargetNetConfig};
use hyperinr_ffi::*;

fn small_model() -> HyperNetModel {
    let cfg = ModelConfig::new(
        EncoderConfig {
            base_channels: 2,
            strides: vec![2, 4],
            dilations: vec![1, 3, 9],
            latent_dim: 4,
        },
        8,
        TargetNetConfig::new(4, vec![8, 8]).unwrap(),
        16000,
    )
    .unwrap();
    HyperNetModel::init(3, cfg).unwrap()
}

fn cpath(p: &std::path::Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = hyperinr_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn encode_render_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let model = small_model();
    let ckpt = dir.path().join("m.hsck");
    model.save_checkpoint(&ckpt, None, None).unwrap();
    let x: Vec<f64> = (0..512).map(|i| (i as f64 * 0.05).sin() * 0.3).collect();

    unsafe {
        let mut handle = ptr::null_mut();
        assert_eq!(hyperinr_model_load(cpath(&ckpt).as_ptr(), &mut handle), HyperinrStatus::Ok);
        assert_eq!(hyperinr_model_sample_rate(handle), 16000);
        assert_eq!(hyperinr_model_param_count(handle), model.param_count());

        let mut inr = ptr::null_mut();
        assert_eq!(hyperinr_model_encode(handle, x.as_ptr(), x.len(), &mut inr), HyperinrStatus::Ok);
        assert_eq!(hyperinr_inr_param_count(inr), 8 * 8 + 8 + 8 * 8 + 8 + 9);

        let mut out = vec![0.0; 300];
        assert_eq!(hyperinr_inr_render(inr, 16000, out.as_mut_ptr(), out.len()), HyperinrStatus::Ok);
        let audio = hyperinr::audio::AudioBuffer::new(x.clone(), 16000).unwrap();
        let want = model.predict_inr(&audio).unwrap().render(&make_grid(300, 16000).unwrap()).unwrap();
        assert_eq!(out, want.samples());

        let hsir = dir.path().join("x.hsir");
        assert_eq!(hyperinr_inr_save(inr, cpath(&hsir).as_ptr()), HyperinrStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(hyperinr_inr_load(cpath(&hsir).as_ptr(), &mut back), HyperinrStatus::Ok);
        assert_eq!(hyperinr_inr_param_count(back), hyperinr_inr_param_count(inr));

        hyperinr_inr_free(back);
        hyperinr_inr_free(inr);
        hyperinr_model_free(handle);
    }
}

#[test]
fn errors_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    unsafe {
        let mut handle = ptr::null_mut();
        let missing = dir.path().join("nope.hsck");
        assert_eq!(hyperinr_model_load(cpath(&missing).as_ptr(), &mut handle), HyperinrStatus::Io);
        assert!(handle.is_null());
        assert!(last_error().contains("nope.hsck"));

        let bogus = dir.path().join("bogus.hsir");
        std::fs::write(&bogus, b"NOPE0000").unwrap();
        let mut inr = ptr::null_mut();
        assert_eq!(hyperinr_inr_load(cpath(&bogus).as_ptr(), &mut inr), HyperinrStatus::Format);
        assert_eq!(hyperinr_model_load(ptr::null(), &mut handle), HyperinrStatus::NullArgument);

        let model = small_model();
        let ckpt = dir.path().join("m.hsck");
        model.save_checkpoint(&ckpt, None, None).unwrap();
        assert_eq!(hyperinr_model_load(cpath(&ckpt).as_ptr(), &mut handle), HyperinrStatus::Ok);
        let short = [0.1; 3];
        assert_eq!(
            hyperinr_model_encode(handle, short.as_ptr(), 3, &mut inr),
            HyperinrStatus::InputTooShort
        );
        hyperinr_model_free(handle);
        hyperinr_model_free(ptr::null_mut());
        assert_eq!(hyperinr_model_sample_rate(ptr::null()), 0);
    }
}

#[test]
fn helpers() {
    assert_eq!(hyperinr_resampled_len(32768, 22050, 8000), 11889);
    assert_eq!(hyperinr_resampled_len(10, 0, 8000), 0);
    let mut n = 0;
    unsafe {
        let base = [256usize; 4];
        assert_eq!(hyperinr_target_param_count(16, base.as_ptr(), 4, &mut n), HyperinrStatus::Ok);
        assert_eq!(n, 206081);
        assert_eq!(hyperinr_target_param_count(0, base.as_ptr(), 4, &mut n), HyperinrStatus::InvalidArgument);
    }
}

#[test]
fn metrics() {
    let x = [1.0, -1.0, 1.0, -1.0];
    let y = [1.1, -0.9, 0.9, -1.1];
    let mut v = 0.0;
    unsafe {
        assert_eq!(hyperinr_si_snr(x.as_ptr(), y.as_ptr(), 4, 16000, &mut v), HyperinrStatus::Ok);
        assert!((v - 20.0).abs() < 1e-9);
        assert_eq!(hyperinr_mse(x.as_ptr(), x.as_ptr(), 4, 16000, &mut v), HyperinrStatus::Ok);
        assert_eq!(v, 0.0);
        let z = [0.0; 4];
        assert_eq!(hyperinr_si_snr(z.as_ptr(), y.as_ptr(), 4, 16000, &mut v), HyperinrStatus::Degenerate);
        let long: Vec<f64> = (0..4096).map(|i| (i as f64 * 0.1).sin()).collect();
        assert_eq!(hyperinr_lsd(long.as_ptr(), long.as_ptr(), long.len(), 16000, &mut v), HyperinrStatus::Ok);
        assert_eq!(v, 0.0);
    }
}

#[test]
fn header_declares_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/hyperinr.h")).unwrap();
    for sym in [
        "hyperinr_model_load",
        "hyperinr_model_encode",
        "hyperinr_inr_render",
        "hyperinr_last_error",
        "HYPERINR_STATUS_OK",
        "typedef struct HyperinrModel HyperinrModel",
    ] {
        assert!(header.contains(sym), "{sym} missing from header");
    }
}
