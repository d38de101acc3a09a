use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use freqattn::cli::Model;
use freqattn::config::RunConfig;
use freqattn_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(fa_last_error_message()) }.to_string_lossy().into_owned()
}

fn small_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.features.mel.n_mels = 16;
    cfg.features.crop_seconds = 0.4;
    cfg.network.channels = vec![8, 16];
    cfg.network.kernels = vec![3, 3];
    cfg.network.strides = vec![2, 2];
    cfg.network.embedding_dim = 12;
    cfg.attention.k = vec![2, 4];
    cfg.attention.reduction = 4;
    cfg
}

#[test]
fn header_is_valid_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/freqattn.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for sym in ["fa_model_load", "fa_model_embed", "fa_compute_metrics", "fa_attention_forward", "FA_STATUS_OK"] {
        assert!(text.contains(sym), "header lacks {sym}");
    }
    let Ok(status) = Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"])
        .arg(&header)
        .status()
    else {
        eprintln!("no C compiler on PATH, skipping syntax check");
        return;
    };
    assert!(status.success());
}

#[test]
fn verify_dct_passes() {
    assert_eq!(fa_verify_dct(), FaStatus::Ok);
    assert!(!unsafe { CStr::from_ptr(fa_version()) }.to_bytes().is_empty());
}

#[test]
fn model_round_trip_matches_rust() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.famc");
    let model = Model::init(&small_config(), 3).unwrap();
    model.save(&path).unwrap();

    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    let mut handle = ptr::null_mut();
    assert_eq!(unsafe { fa_model_load(cpath.as_ptr(), &mut handle) }, FaStatus::Ok);
    let dim = unsafe { fa_model_embedding_dim(handle) };
    assert_eq!(dim, 12);

    let feats: Vec<f64> = (0..16 * 50).map(|i| ((i * 37) % 101) as f64 / 50.0).collect();
    let mut emb = vec![0.0; dim];
    let st = unsafe { fa_model_embed(handle, feats.as_ptr(), 16, 50, emb.as_mut_ptr(), dim) };
    assert_eq!(st, FaStatus::Ok, "{}", last_error());
    let fm = freqattn::features::FeatureMatrix::new(freqattn::Tensor::from_vec(&[16, 50], feats.clone()).unwrap());
    assert_eq!(emb, model.embed(&fm).unwrap());

    let st = unsafe { fa_model_embed(handle, feats.as_ptr(), 16, 50, emb.as_mut_ptr(), dim - 1) };
    assert_eq!(st, FaStatus::Dimension);
    let st = unsafe { fa_model_embed(handle, feats.as_ptr(), 16, 4, emb.as_mut_ptr(), dim) };
    assert_eq!(st, FaStatus::Dimension, "{}", last_error());
    assert!(last_error().contains("too short"), "{}", last_error());
    unsafe { fa_model_free(handle) };
}

#[test]
fn model_load_errors() {
    let mut handle = ptr::null_mut();
    let missing = CString::new("/nonexistent/x.famc").unwrap();
    assert_eq!(unsafe { fa_model_load(missing.as_ptr(), &mut handle) }, FaStatus::Io);
    assert!(handle.is_null());
    assert_eq!(unsafe { fa_model_load(ptr::null(), &mut handle) }, FaStatus::NullPointer);
    assert!(last_error().contains("path"));

    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk");
    std::fs::write(&junk, b"NOPE....").unwrap();
    let junk = CString::new(junk.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { fa_model_load(junk.as_ptr(), &mut handle) }, FaStatus::Format);
    unsafe { fa_model_free(ptr::null_mut()) };
}

#[test]
fn scoring_and_metrics() {
    let (a, b) = ([1.0, 0.0], [1.0, 1.0]);
    let mut s = 0.0;
    assert_eq!(unsafe { fa_cosine_score(a.as_ptr(), b.as_ptr(), 2, &mut s) }, FaStatus::Ok);
    assert!((s - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    let z = [0.0, 0.0];
    assert_eq!(unsafe { fa_cosine_score(a.as_ptr(), z.as_ptr(), 2, &mut s) }, FaStatus::Numeric);

    let scores = [0.9, 0.2, 0.8, 0.1];
    let labels = [1u8, 1, 0, 0];
    let (mut eer, mut dcf) = (0.0, 0.0);
    assert_eq!(unsafe { fa_compute_metrics(scores.as_ptr(), labels.as_ptr(), 4, &mut eer, &mut dcf) }, FaStatus::Ok);
    assert_eq!(eer, 0.5);
    assert!((dcf - 0.5).abs() < 1e-15);
    let only_targets = [1u8; 4];
    let st = unsafe { fa_compute_metrics(scores.as_ptr(), only_targets.as_ptr(), 4, &mut eer, &mut dcf) };
    assert_eq!(st, FaStatus::Input);
}

#[test]
fn feature_extraction() {
    let samples: Vec<f64> = (0..16000).map(|i| 0.3 * (i as f64 * 0.2).sin()).collect();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { fa_extract_features(samples.as_ptr(), samples.len(), 16000, &mut h) }, FaStatus::Ok);
    let (mut m, mut t) = (0, 0);
    assert_eq!(unsafe { fa_features_shape(h, &mut m, &mut t) }, FaStatus::Ok);
    assert_eq!((m, t), (64, 98));
    let data = unsafe { std::slice::from_raw_parts(fa_features_data(h), m * t) };
    assert!(data.iter().all(|v| v.is_finite()));
    unsafe { fa_features_free(h) };

    let short = [0.1; 100];
    assert_eq!(unsafe { fa_extract_features(short.as_ptr(), 100, 16000, &mut h) }, FaStatus::Dimension);
    assert!(h.is_null());
}

#[test]
fn attention_blocks() {
    let (c, f, t) = (8usize, 4usize, 6usize);
    let x: Vec<f64> = (0..c * f * t).map(|i| ((i * 13) % 17) as f64 / 17.0 - 0.5).collect();
    let mut counts = Vec::new();
    for (variant, agg) in [
        (FaVariant::Se, FaAggregation::Avg),
        (FaVariant::Sfsc, FaAggregation::Avg),
        (FaVariant::Mfsc, FaAggregation::AvgMax),
    ] {
        let mut h = ptr::null_mut();
        assert_eq!(unsafe { fa_attention_new(variant, agg, c, 2, 4, f, t, 3, &mut h) }, FaStatus::Ok);
        counts.push(unsafe { fa_attention_param_count(h) });
        let mut s = vec![0.0; c];
        let mut y = vec![0.0; c * f * t];
        let st = unsafe { fa_attention_forward(h, x.as_ptr(), c, f, t, s.as_mut_ptr(), y.as_mut_ptr()) };
        assert_eq!(st, FaStatus::Ok, "{}", last_error());
        assert!(s.iter().all(|&v| v > 0.0 && v < 1.0));
        for ch in 0..c {
            for i in 0..f * t {
                assert_eq!(y[ch * f * t + i], x[ch * f * t + i] * s[ch]);
            }
        }
        // a 1x2 map cannot host the chosen frequency components
        let st = unsafe { fa_attention_forward(h, x.as_ptr(), c, 1, 2, ptr::null_mut(), ptr::null_mut()) };
        if variant == FaVariant::Se {
            assert_eq!(st, FaStatus::Ok);
        } else {
            assert_eq!(st, FaStatus::Index, "{}", last_error());
        }
        unsafe { fa_attention_free(h) };
    }
    assert!(counts.windows(2).all(|w| w[0] == w[1]));

    let mut h = ptr::null_mut();
    let st = unsafe { fa_attention_new(FaVariant::Sfsc, FaAggregation::Avg, 8, 2, 3, f, t, 0, &mut h) };
    assert_eq!(st, FaStatus::Config);
    let st = unsafe { fa_attention_new(FaVariant::Mfsc, FaAggregation::Avg, 8, 2, 25, f, t, 0, &mut h) };
    assert_eq!(st, FaStatus::Capacity);
}
