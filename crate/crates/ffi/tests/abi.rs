use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use gti_core::rtscore::{train, TrainConfig, TrainingSample, GroundingFeatures, FEATURE_DIM};
use gti_core::synthworld::{generate_dataset, write_dataset, GenConfig};
use gti_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(gti_last_error()) }.to_string_lossy().into_owned()
}

fn bx(x: f64, y: f64, w: f64, h: f64) -> GtiBox {
    GtiBox { x, y, w, h }
}

#[test]
fn geometry_and_metrics() {
    let (a, b) = (bx(0.0, 0.0, 10.0, 10.0), bx(5.0, 0.0, 10.0, 10.0));
    let mut v = 0.0;
    unsafe {
        assert_eq!(gti_iou(&a, &b, &mut v), GtiStatus::Ok);
        assert!((v - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(gti_center_distance(&a, &b, &mut v), GtiStatus::Ok);
        assert_eq!(v, 5.0);
        assert_eq!(gti_iou(&a, ptr::null(), &mut v), GtiStatus::NullPointer);
        let bad = bx(0.0, 0.0, 0.0, 4.0);
        assert_eq!(gti_iou(&a, &bad, &mut v), GtiStatus::InvalidArgument);
        assert!(!last_error().is_empty());

        let gt = vec![a; 4];
        assert_eq!(gti_success_auc(gt.as_ptr(), gt.as_ptr(), 4, &mut v), GtiStatus::Ok);
        assert!((v - 20.0 / 21.0).abs() < 1e-12);
        let pred = [a, a, bx(30.0, 0.0, 10.0, 10.0), bx(20.0, 0.0, 10.0, 10.0)];
        assert_eq!(gti_precision_at(pred.as_ptr(), gt.as_ptr(), 4, 20.0, &mut v), GtiStatus::Ok);
        assert_eq!(v, 0.75);
        assert_eq!(gti_precision_at(pred.as_ptr(), gt.as_ptr(), 0, 20.0, &mut v), GtiStatus::InvalidArgument);
    }
    assert_eq!(gti_smoothed_l1(0.5, 0.0), 0.125);
    assert_eq!(gti_smoothed_l1(2.0, 0.0), 1.5);
}

#[test]
fn switch_controller_hand_trace() {
    let mut sw = ptr::null_mut();
    unsafe {
        assert_eq!(gti_switch_new(0.998, &mut sw), GtiStatus::Ok);
        let mut saved = 0.0;
        assert_eq!(gti_switch_saved(sw, &mut saved), GtiStatus::Ok);
        assert!(saved.is_nan());
        let mut out = Vec::new();
        for s in [0.9, 0.5, 0.95] {
            let mut reground = false;
            assert_eq!(gti_switch_step(sw, s, &mut reground), GtiStatus::Ok);
            gti_switch_saved(sw, &mut saved);
            out.push((reground, saved));
        }
        assert_eq!(out, vec![(true, 0.9), (false, 0.9 * 0.998), (true, 0.95)]);
        let mut reground = false;
        assert_eq!(gti_switch_step(sw, 1.5, &mut reground), GtiStatus::InvalidArgument);
        gti_switch_free(sw);
        assert_eq!(gti_switch_new(0.0, &mut sw), GtiStatus::InvalidArgument);
    }
}

#[test]
fn model_round_trip_and_gate() {
    let samples: Vec<TrainingSample> = (0..64)
        .map(|i| TrainingSample {
            features: GroundingFeatures([i as f64 / 64.0; FEATURE_DIM]),
            confidence: 0.9,
            gt_r: 0.7,
            gt_t: 0.3,
            video_id: 0,
            query: "the red rectangle".into(),
            frame_index: i,
        })
        .collect();
    let model = train(&samples, &TrainConfig { epochs: 2, ..Default::default() }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    model.save(&path).unwrap();
    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    let mut m = ptr::null_mut();
    unsafe {
        assert_eq!(gti_model_load(cpath.as_ptr(), &mut m), GtiStatus::Ok);
        let x = [0.5; FEATURE_DIM];
        let mut s = GtiRtScores { r: -1.0, t: -1.0 };
        assert_eq!(gti_model_predict(m, x.as_ptr(), FEATURE_DIM, 0.9, &mut s), GtiStatus::Ok);
        assert!((0.0..=1.0).contains(&s.r) && (0.0..=1.0).contains(&s.t));
        assert_eq!(gti_model_predict(m, x.as_ptr(), FEATURE_DIM, 0.49, &mut s), GtiStatus::Ok);
        assert_eq!(s.r, 0.0);
        assert_eq!(gti_model_predict(m, x.as_ptr(), 3, 0.9, &mut s), GtiStatus::InvalidArgument);
        gti_model_free(m);

        let missing = CString::new(dir.path().join("nope.json").to_str().unwrap()).unwrap();
        assert_eq!(gti_model_load(missing.as_ptr(), &mut m), GtiStatus::Io);
        std::fs::write(&path, "{not json").unwrap();
        assert_eq!(gti_model_load(cpath.as_ptr(), &mut m), GtiStatus::Parse);
        assert_eq!(gti_feature_dim(), FEATURE_DIM);
    }
}

#[test]
fn dataset_handle() {
    let ds = generate_dataset(&GenConfig { n_videos: 3, frames: [5, 8], ..Default::default() }, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.jsonl");
    write_dataset(&ds, &path).unwrap();
    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    let mut h = ptr::null_mut();
    unsafe {
        assert_eq!(gti_dataset_open(cpath.as_ptr(), &mut h), GtiStatus::Ok);
        let mut n = 0;
        assert_eq!(gti_dataset_len(h, &mut n), GtiStatus::Ok);
        assert_eq!(n, 3);
        let sample = ds.videos[1].to_sample().unwrap();
        assert_eq!(gti_dataset_n_frames(h, 1, &mut n), GtiStatus::Ok);
        assert_eq!(n, sample.n_frames());
        let mut b = bx(0.0, 0.0, 0.0, 0.0);
        assert_eq!(gti_dataset_gt_box(h, 1, n - 1, &mut b), GtiStatus::Ok);
        let g = sample.gt_tubelet[n - 1];
        assert_eq!((b.x, b.y, b.w, b.h), (g.x, g.y, g.w, g.h));
        assert_eq!(gti_dataset_gt_box(h, 1, n, &mut b), GtiStatus::OutOfRange);
        assert_eq!(gti_dataset_gt_box(h, 9, 0, &mut b), GtiStatus::OutOfRange);
        gti_dataset_free(h);
        gti_dataset_free(ptr::null_mut());
    }
}

fn target_dir() -> PathBuf {
    // tests run from target/<profile>/deps
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_links_against_header_and_staticlib() {
    let crate_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let lib = target_dir().join("libgti_ffi.a");
    assert!(lib.exists(), "static library not found at {}", lib.display());
    let out = tempfile::tempdir().unwrap();
    let exe = out.path().join("smoke");
    let status = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-I"])
        .arg(crate_dir.join("include"))
        .arg(crate_dir.join("tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .expect("run cc");
    assert!(status.success());
    let run = Command::new(&exe).output().unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("ok "));
}
