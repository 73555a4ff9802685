use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use artmarks::geometry::SimilarityTransform;
use artmarks::landmarks::write_landmarks;
use artmarks::model::{ModelBundle, NetworkConfig, PipelineGeometry};
use artmarks::synthetic::random_face;
use artmarks_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(am_last_error()) }.to_string_lossy().into_owned()
}

fn pts(v: &[(f64, f64)]) -> Vec<AmPoint> {
    v.iter().map(|&(x, y)| AmPoint { x, y }).collect()
}

#[test]
fn softargmax_of_a_peak() {
    // two channels, 3x4; channel 1 peaks at row 2, column 1
    let mut h = vec![0.0; 24];
    h[12 + 2 * 4 + 1] = 60.0;
    let mut out = [AmPoint::default(); 2];
    let s = unsafe { am_softargmax(h.as_ptr(), 2, 3, 4, 1.0, out.as_mut_ptr()) };
    assert_eq!(s, AmStatus::Ok);
    assert!((out[0].x - 1.5).abs() < 1e-12 && (out[0].y - 1.0).abs() < 1e-12);
    assert!((out[1].x - 1.0).abs() < 1e-9 && (out[1].y - 2.0).abs() < 1e-9);
    let s = unsafe { am_softargmax(h.as_ptr(), 2, 3, 4, 0.0, out.as_mut_ptr()) };
    assert_eq!(s, AmStatus::InvalidArgument);
    assert!(last_error().contains("temperature"), "{}", last_error());
}

#[test]
fn similarity_fits() {
    let t = SimilarityTransform::new(0.3, 1.5, 4.0, -2.0);
    let src: Vec<(f64, f64)> = (0..12).map(|i| ((i * 7 % 11) as f64 * 10.0, (i * 5 % 13) as f64 * 8.0)).collect();
    let mut dst: Vec<(f64, f64)> = src
        .iter()
        .map(|&(x, y)| {
            let q = t.apply(artmarks::Point::new(x, y));
            (q.x, q.y)
        })
        .collect();
    let (s, d) = (pts(&src), pts(&dst));
    let mut out = AmSimilarity::default();
    assert_eq!(unsafe { am_fit_similarity(s.as_ptr(), d.as_ptr(), s.len(), &mut out) }, AmStatus::Ok);
    assert!((out.angle - 0.3).abs() < 1e-9 && (out.scale - 1.5).abs() < 1e-9);

    dst[3] = (500.0, -400.0);
    let d = pts(&dst);
    let mut mask = vec![9u8; s.len()];
    let mut count = 0usize;
    let status = unsafe {
        am_ransac_similarity(s.as_ptr(), d.as_ptr(), s.len(), 1.0, 500, 4, 7, &mut out, mask.as_mut_ptr(), &mut count)
    };
    assert_eq!(status, AmStatus::Ok);
    assert_eq!(count, 11);
    assert_eq!(mask[3], 0);
    assert!(mask.iter().enumerate().all(|(i, &m)| i == 3 || m == 1));
    assert!((out.tx - 4.0).abs() < 1e-6 && (out.ty + 2.0).abs() < 1e-6);

    assert_eq!(
        unsafe { am_fit_similarity(ptr::null(), d.as_ptr(), 3, &mut out) },
        AmStatus::NullPointer
    );
    assert_eq!(unsafe { am_fit_similarity(s.as_ptr(), d.as_ptr(), 1, &mut out) }, AmStatus::InvalidArgument);
    let same = pts(&[(1.0, 1.0); 4]);
    assert_eq!(unsafe { am_fit_similarity(same.as_ptr(), d.as_ptr(), 4, &mut out) }, AmStatus::Degenerate);
}

#[test]
fn tps_handle_interpolates() {
    let src = pts(&[(0.0, 0.0), (10.0, 0.0), (0.0, 10.0), (10.0, 10.0), (5.0, 5.0)]);
    let dst = pts(&[(0.0, 0.0), (10.0, 0.0), (0.0, 10.0), (10.0, 10.0), (6.0, 4.0)]);
    let mut tps = ptr::null_mut();
    assert_eq!(unsafe { am_tps_fit(src.as_ptr(), dst.as_ptr(), 5, 0.0, &mut tps) }, AmStatus::Ok);
    let mut out = vec![AmPoint::default(); 5];
    assert_eq!(unsafe { am_tps_eval(tps, src.as_ptr(), 5, out.as_mut_ptr()) }, AmStatus::Ok);
    for (o, d) in out.iter().zip(&dst) {
        assert!((o.x - d.x).abs() < 1e-9 && (o.y - d.y).abs() < 1e-9);
    }
    unsafe { am_tps_free(tps) };
    unsafe { am_tps_free(ptr::null_mut()) };

    let mut bad = ptr::null_mut();
    assert_eq!(unsafe { am_tps_fit(src.as_ptr(), dst.as_ptr(), 2, 0.0, &mut bad) }, AmStatus::Degenerate);
    assert!(bad.is_null());
}

#[test]
fn landmarks_and_mean_error() {
    let dir = tempfile::tempdir().unwrap();
    let (_, lm) = random_face(100, 3);
    let path = dir.path().join("a.json");
    write_landmarks(&lm, &path).unwrap();
    let c = CString::new(path.to_str().unwrap()).unwrap();
    let mut out = vec![AmPoint::default(); AM_NUM_LANDMARKS];
    let (mut w, mut h) = (0u32, 0u32);
    let s = unsafe { am_read_landmarks(c.as_ptr(), true, 0, 0, out.as_mut_ptr(), &mut w, &mut h) };
    assert_eq!(s, AmStatus::Ok);
    assert_eq!((w, h), (100, 100));
    assert_eq!(out[30].x, lm.points()[30].x);

    let shifted: Vec<AmPoint> = out.iter().map(|p| AmPoint { x: p.x + 3.0, y: p.y + 4.0 }).collect();
    let mut me = 0.0;
    assert_eq!(unsafe { am_mean_error(out.as_ptr(), shifted.as_ptr(), ptr::null(), 0, &mut me) }, AmStatus::Ok);
    assert!((me - 5.0).abs() < 1e-12);
    let subset = [0usize, 99];
    let s = unsafe { am_mean_error(out.as_ptr(), shifted.as_ptr(), subset.as_ptr(), 2, &mut me) };
    assert_eq!(s, AmStatus::InvalidArgument);

    let missing = CString::new(dir.path().join("nope.json").to_str().unwrap()).unwrap();
    let s = unsafe { am_read_landmarks(missing.as_ptr(), true, 0, 0, out.as_mut_ptr(), ptr::null_mut(), ptr::null_mut()) };
    assert_eq!(s, AmStatus::Io);
    assert!(last_error().contains("nope.json"));
}

#[test]
fn detector_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let geo = PipelineGeometry {
        hr_size: 64,
        global_size: 16,
        patch_size: 16,
    };
    let cfg = NetworkConfig {
        base_width: 4,
        res_blocks: 1,
        stem_kernel: 3,
    };
    let bundle = ModelBundle::new(cfg, geo, 1).unwrap();
    bundle.save(dir.path()).unwrap();
    let c = CString::new(dir.path().to_str().unwrap()).unwrap();
    let mut det = ptr::null_mut();
    assert_eq!(unsafe { am_detector_load(c.as_ptr(), &mut det) }, AmStatus::Ok, "{}", last_error());

    let (img, _) = random_face(48, 2);
    let rgb = img.to_rgb8();
    let stride = 3 * 48 + 5;
    let mut bytes = vec![0u8; stride * 48];
    for y in 0..48 {
        bytes[y * stride..y * stride + 144].copy_from_slice(&rgb.as_raw()[y * 144..(y + 1) * 144]);
    }
    let mut refined = vec![AmPoint::default(); AM_NUM_LANDMARKS];
    let mut global = vec![AmPoint::default(); AM_NUM_LANDMARKS];
    let s = unsafe { am_detector_predict(det, bytes.as_ptr(), 48, 48, stride, refined.as_mut_ptr(), global.as_mut_ptr()) };
    assert_eq!(s, AmStatus::Ok, "{}", last_error());
    let expected = bundle.detector().forward_full(&artmarks::raster::Image::from_rgb8(&rgb)).unwrap();
    for (a, b) in refined.iter().zip(expected.refined.points()) {
        assert!((a.x - b.x).abs() < 1e-9 && (a.y - b.y).abs() < 1e-9);
    }
    let s = unsafe { am_detector_predict(det, bytes.as_ptr(), 48, 48, 10, refined.as_mut_ptr(), ptr::null_mut()) };
    assert_eq!(s, AmStatus::InvalidArgument);
    unsafe { am_detector_free(det) };

    let missing = CString::new(dir.path().join("none").to_str().unwrap()).unwrap();
    let mut det = ptr::null_mut();
    assert_ne!(unsafe { am_detector_load(missing.as_ptr(), &mut det) }, AmStatus::Ok);
    assert!(det.is_null());
}

#[test]
fn version_is_set() {
    let v = unsafe { CStr::from_ptr(am_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

fn header() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include/artmarks.h")
}

fn cc() -> String {
    std::env::var("CC").unwrap_or_else(|_| "cc".into())
}

#[test]
fn header_compiles_as_c_and_cpp() {
    let h = header();
    assert!(h.is_file());
    let text = std::fs::read_to_string(&h).unwrap();
    for name in ["am_detector_load", "am_softargmax", "am_tps_free", "AM_STATUS_OK", "AM_NUM_LANDMARKS"] {
        assert!(text.contains(name), "{name}");
    }
    let status = Command::new(cc()).args(["-fsyntax-only", "-Wall", "-Werror", "-std=c99"]).arg(&h).status().unwrap();
    assert!(status.success());
    let status = Command::new(cc()).args(["-fsyntax-only", "-x", "c++"]).arg(&h).status().unwrap();
    assert!(status.success());
}

#[test]
fn c_program_links_against_static_library() {
    let target = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    let lib = target.join("libartmarks_ffi.a");
    assert!(lib.is_file(), "{} missing", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(
        &src,
        r#"
#include <stdio.h>
#include "artmarks.h"
int main(void) {
    AmPoint src[4] = {{0, 0}, {1, 0}, {0, 1}, {1, 1}};
    AmPoint dst[4] = {{2, 3}, {2, 5}, {0, 3}, {0, 5}};
    AmSimilarity t;
    if (am_fit_similarity(src, dst, 4, &t) != AM_STATUS_OK) return 1;
    if (am_fit_similarity(NULL, dst, 4, &t) != AM_STATUS_NULL_POINTER) return 2;
    if (am_last_error()[0] == '\0') return 3;
    printf("%.6f %.6f %.6f %.6f\n", t.angle, t.scale, t.tx, t.ty);
    return 0;
}
"#,
    )
    .unwrap();
    let exe = dir.path().join("main");
    let out = Command::new(cc())
        .arg(&src)
        .arg("-I")
        .arg(header().parent().unwrap())
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&exe).output().unwrap();
    assert!(run.status.success(), "exit {:?}", run.status);
    let fields: Vec<f64> = String::from_utf8_lossy(&run.stdout)
        .split_whitespace()
        .map(|v| v.parse().unwrap())
        .collect();
    let expected = [std::f64::consts::FRAC_PI_2, 2.0, 2.0, 3.0];
    for (a, b) in fields.iter().zip(expected) {
        assert!((a - b).abs() < 1e-6, "{fields:?}");
    }
}
