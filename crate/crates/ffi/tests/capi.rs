use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use simtune::seed::derive_seed;
use simtune::tensor::{CheckpointMeta, MlpConfig, MlpModel, ModelCheckpoint};
use simtune_ffi::*;

fn last_error() -> String {
    let p = simtune_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string()
}

fn square(side: f64) -> *mut SimtunePolygon {
    let xy = [0.0, 0.0, side, 0.0, side, side, 0.0, side];
    let mut p = ptr::null_mut();
    assert_eq!(unsafe { simtune_polygon_new(xy.as_ptr(), 4, &mut p) }, SimtuneStatus::Ok);
    p
}

#[test]
fn polygon_round_trip_and_mass_properties() {
    let p = square(2.0);
    let mut n = 0;
    let mut xy = [0.0; 8];
    let (mut a, mut cx, mut cy) = (0.0, 0.0, 0.0);
    unsafe {
        assert_eq!(simtune_polygon_len(p, &mut n), SimtuneStatus::Ok);
        assert_eq!(n, 4);
        assert_eq!(simtune_polygon_vertices(p, xy.as_mut_ptr(), 8), SimtuneStatus::Ok);
        assert_eq!(simtune_polygon_mass_properties(p, &mut a, &mut cx, &mut cy), SimtuneStatus::Ok);
        assert_eq!(simtune_polygon_vertices(p, xy.as_mut_ptr(), 3), SimtuneStatus::BufferTooSmall);
        simtune_polygon_free(p);
    }
    assert_eq!(xy, [0.0, 0.0, 2.0, 0.0, 2.0, 2.0, 0.0, 2.0]);
    assert_eq!((a, cx, cy), (4.0, 1.0, 1.0));
}

#[test]
fn settle_flat_cut_and_fidelity() {
    let p = square(1.0);
    let mut r = SimtuneSettleResult::default();
    unsafe {
        assert_eq!(simtune_settle(p, 0.0, 20.0, &mut r), SimtuneStatus::Ok);
        assert!(r.stable && r.settled && r.tilt_deg == 0.0);
        // Past 45 degrees a square rolls onto its next face.
        assert_eq!(simtune_settle(p, 0.9, 20.0, &mut r), SimtuneStatus::Ok);
        assert!((r.tilt_deg - 90.0).abs() < 1e-9, "{r:?}");
        assert_eq!(simtune_settle(p, 0.0, 95.0, &mut r), SimtuneStatus::Config);

        let mut cut = ptr::null_mut();
        assert_eq!(simtune_flat_cut(p, 0.25, &mut cut), SimtuneStatus::Ok);
        let (mut a, mut cx, mut cy) = (0.0, 0.0, 0.0);
        simtune_polygon_mass_properties(cut, &mut a, &mut cx, &mut cy);
        assert!((a - 0.75).abs() < 1e-12);
        let (mut cd, mut fs) = (0.0, 0.0);
        assert_eq!(simtune_shape_fidelity(p, p, 128, 0.05, 1, &mut cd, &mut fs), SimtuneStatus::Ok);
        // Two samplings of the same unit square lie within half a spacing.
        assert!(cd <= 4.0 / (2.0 * 128.0) && fs == 100.0, "{cd} {fs}");
        assert_eq!(simtune_flat_cut(p, 2.0, &mut cut), SimtuneStatus::Geometry);
        simtune_polygon_free(cut);
        simtune_polygon_free(p);
    }
}

#[test]
fn errors_are_reported_with_messages() {
    let mut p = ptr::null_mut();
    unsafe {
        assert_eq!(simtune_polygon_new(ptr::null(), 3, &mut p), SimtuneStatus::NullArgument);
        assert!(last_error().contains("xy"));
        let collinear = [0.0, 0.0, 1.0, 0.0, 2.0, 0.0];
        assert_eq!(simtune_polygon_new(collinear.as_ptr(), 3, &mut p), SimtuneStatus::Geometry);
        assert!(!last_error().is_empty());
        assert!(p.is_null());
        let sq = square(1.0);
        assert!(simtune_last_error().is_null());
        simtune_polygon_free(sq);
        simtune_polygon_free(ptr::null_mut());
        let bad = CString::new("/nonexistent/model.ckpt").unwrap();
        let mut ck = ptr::null_mut();
        assert_eq!(simtune_checkpoint_load(bad.as_ptr(), &mut ck), SimtuneStatus::Io);
    }
}

#[test]
fn seeds_match_the_library() {
    let label = CString::new("rollout").unwrap();
    let mut s = 0;
    assert_eq!(unsafe { simtune_derive_seed(42, label.as_ptr(), &mut s) }, SimtuneStatus::Ok);
    assert_eq!(s, derive_seed(42, "rollout"));
    let v = unsafe { CStr::from_ptr(simtune_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn decode_and_sample_from_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = MlpConfig {
        latent_dim: 8,
        cond_dim: 8,
        hidden: vec![16],
    };
    let ck = ModelCheckpoint::new(
        MlpModel::init(cfg, 3),
        None,
        CheckpointMeta {
            seed: 3,
            label: "t".into(),
            train_steps: 0,
        },
    );
    let path = dir.path().join("m.ckpt");
    ck.save(&path).unwrap();
    let c_path = CString::new(path.to_str().unwrap()).unwrap();
    let mut h = ptr::null_mut();
    unsafe {
        assert_eq!(simtune_checkpoint_load(c_path.as_ptr(), &mut h), SimtuneStatus::Ok);
        let (mut hash, mut d, mut c) = (0, 0, 0);
        assert_eq!(simtune_checkpoint_info(h, &mut hash, &mut d, &mut c), SimtuneStatus::Ok);
        assert_eq!((hash, d, c), (ck.content_hash().unwrap(), 8, 8));
        let cond = [0.5; 8];
        let mut z1 = [0.0; 8];
        let mut z2 = [0.0; 8];
        let mut valid = false;
        assert_eq!(simtune_checkpoint_sample(h, cond.as_ptr(), 8, 4, 9, z1.as_mut_ptr(), 8, &mut valid), SimtuneStatus::Ok);
        assert!(valid);
        simtune_checkpoint_sample(h, cond.as_ptr(), 8, 4, 9, z2.as_mut_ptr(), 8, &mut valid);
        assert_eq!(z1, z2);
        let expect = simtune::flow::sample(&ck.model, None, &cond, 4, &Default::default(), 9).unwrap();
        assert_eq!(z1.to_vec(), expect.latent.values);
        assert_eq!(
            simtune_checkpoint_sample(h, cond.as_ptr(), 7, 4, 9, z1.as_mut_ptr(), 8, &mut valid),
            SimtuneStatus::InvalidInput
        );
        let mut poly = ptr::null_mut();
        assert_eq!(simtune_polygon_decode(z1.as_ptr(), 8, 0.05, &mut poly), SimtuneStatus::Ok);
        let mut n = 0;
        simtune_polygon_len(poly, &mut n);
        assert_eq!(n, 8);
        simtune_polygon_free(poly);
        simtune_checkpoint_free(h);
    }
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/simtune.h")).unwrap();
    let src = std::fs::read_to_string(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("src/lib.rs")).unwrap();
    let exports: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 15);
    for f in exports {
        assert!(header.contains(&format!("{f}(")), "{f} missing from header");
    }
    assert!(header.contains("typedef struct SimtunePolygon SimtunePolygon;"));
}

/// Compiles and runs a small C program against the header and static library.
#[test]
fn c_program_links_and_runs() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    // `cargo test` only builds the rlib, so build the staticlib into its own
    // target directory to stay clear of the running build's lock.
    let exe = std::env::current_exe().unwrap();
    let target = exe.ancestors().nth(3).unwrap().join("ffi-link");
    let built = Command::new(env!("CARGO"))
        .args(["build", "-p", "simtune-ffi", "--lib", "--target-dir"])
        .arg(&target)
        .arg("--manifest-path")
        .arg(manifest.join("Cargo.toml"))
        .status()
        .unwrap();
    assert!(built.success());
    let lib = target.join("debug/libsimtune_ffi.a");
    assert!(lib.exists(), "static library not found at {}", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include "simtune.h"
int main(void) {
    double xy[8] = {0, 0, 3, 0, 3, 1, 0, 1};
    SimtunePolygon *p = NULL;
    if (simtune_polygon_new(xy, 4, &p) != SIMTUNE_STATUS_OK) return 10;
    SimtuneSettleResult r;
    if (simtune_settle(p, 0.0, 20.0, &r) != SIMTUNE_STATUS_OK) return 11;
    SimtunePolygon *bad = NULL;
    if (simtune_flat_cut(p, 5.0, &bad) != SIMTUNE_STATUS_GEOMETRY) return 12;
    if (simtune_last_error() == NULL) return 13;
    simtune_polygon_free(p);
    printf("%d %.3f\n", r.stable, r.tilt_deg);
    return 0;
}
"#,
    )
    .unwrap();
    let bin = dir.path().join("main");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .expect("a C compiler `cc` on PATH");
    assert!(status.success());
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), "1 0.000");
}
