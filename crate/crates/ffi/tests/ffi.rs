use paraprec_ffi::*;
use std::ffi::CStr;
use std::path::PathBuf;
use std::ptr;

fn adr(side: usize) -> *mut PpProblem {
    let mut p = ptr::null_mut();
    assert_eq!(unsafe { pp_problem_adr_new(side, 50.0, &mut p) }, PpStatus::Ok);
    p
}

fn last_error() -> String {
    let p = pp_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn sketch_columns_table_entry() {
    let mut k = 0u64;
    let s = unsafe { pp_sketch_min_columns(PpSketchKind::RescaledRademacher, 10_000, 2, 10.0, 1e-3, &mut k) };
    assert_eq!(s, PpStatus::Ok);
    assert_eq!(k, 239);
    let s = unsafe { pp_sketch_min_columns(PpSketchKind::Psrht, 10_000, 2, 0.5, 1e-3, &mut k) };
    assert_eq!(s, PpStatus::InvalidArgument);
    assert!(!last_error().is_empty());
}

#[test]
fn problem_handle_queries() {
    let p = adr(10);
    unsafe {
        assert_eq!(pp_problem_dim(p), 100);
        assert_eq!(pp_problem_param_dim(p), 1);
        assert_eq!(pp_problem_grid_len(p), 250);
        pp_problem_free(p);
        assert_eq!(pp_problem_dim(ptr::null()), 0);
        pp_problem_free(ptr::null_mut());
    }
}

#[test]
fn interpolation_and_apply() {
    let prob = adr(8);
    let pts = [0.1, 0.5, 0.9];
    let mut p = ptr::null_mut();
    let mode = c"none";
    unsafe {
        assert_eq!(pp_precond_from_points(prob, PpSketchKind::Psrht, 16, 3, mode.as_ptr(), pts.as_ptr(), 3, &mut p), PpStatus::Ok);
        assert_eq!(pp_precond_len(p), 3);
        let mut got = [0.0; 3];
        assert_eq!(pp_precond_points(p, got.as_mut_ptr(), 3), PpStatus::Ok);
        assert_eq!(got, pts);
        let mut w = [0.0; 3];
        assert_eq!(pp_precond_weights(p, &pts[1], w.as_mut_ptr(), 3), PpStatus::Ok);
        for (i, wi) in w.iter().enumerate() {
            assert!((wi - if i == 1 { 1.0 } else { 0.0 }).abs() < 1e-8, "{w:?}");
        }
        let mut r = -1.0;
        assert_eq!(pp_precond_residual(p, &pts[1], &mut r), PpStatus::Ok);
        assert!(r.abs() < 1e-5, "{r}");
        let x: Vec<f64> = (0..64).map(|i| (i as f64).sin()).collect();
        let mut y = vec![0.0; 64];
        assert_eq!(pp_precond_apply(p, &0.3, x.as_ptr(), y.as_mut_ptr(), 64, 0), PpStatus::Ok);
        assert!(y.iter().any(|v| *v != 0.0));
        assert_eq!(pp_precond_apply(p, &0.3, x.as_ptr(), y.as_mut_ptr(), 10, 0), PpStatus::Dimension);
        assert_eq!(pp_precond_weights(ptr::null(), &0.3, w.as_mut_ptr(), 3), PpStatus::NullPointer);
        pp_precond_free(p);
        pp_problem_free(prob);
    }
}

#[test]
fn greedy_and_bad_constraint() {
    let prob = adr(8);
    let mut p = ptr::null_mut();
    unsafe {
        let bad = c"kappa:oops";
        let s = pp_precond_greedy(prob, PpSketchKind::Psrht, 16, 1, bad.as_ptr(), 2, ptr::null(), &mut p);
        assert_eq!(s, PpStatus::InvalidArgument);
        let s = pp_precond_greedy(prob, PpSketchKind::Psrht, 16, 1, ptr::null(), 3, &0.0, &mut p);
        assert_eq!(s, PpStatus::Ok);
        assert_eq!(pp_precond_len(p), 3);
        let mut got = [1.0; 3];
        pp_precond_points(p, got.as_mut_ptr(), 3);
        assert_eq!(got[0], 0.0);
        pp_precond_free(p);
        pp_problem_free(prob);
    }
}

#[test]
fn shepard_weights_sum_to_one() {
    let pts = [0.0, 1.0];
    let mut w = [0.0; 2];
    assert_eq!(unsafe { pp_shepard_weights(&0.25, pts.as_ptr(), 2, 1, 2.0, w.as_mut_ptr()) }, PpStatus::Ok);
    assert!((w[0] + w[1] - 1.0).abs() < 1e-14);
    assert!(w[0] > w[1]);
}

#[test]
fn header_compiles_and_links_from_c() {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header = std::fs::read_to_string(root.join("include/paraprec.h")).unwrap();
    for f in ["pp_problem_adr_new", "pp_precond_greedy", "pp_precond_apply", "pp_last_error_message"] {
        assert!(header.contains(f), "{f} missing from header");
    }
    let Ok(cc) = which_cc() else { return };
    let target = root.join("../../target/debug");
    let lib = target.join("libparaprec_ffi.a");
    if !lib.exists() {
        return;
    }
    let dir = tempfile_dir();
    let exe = dir.join("smoke");
    let status = std::process::Command::new(cc)
        .arg(root.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(root.join("include"))
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success());
    let out = std::process::Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "C smoke test exit {:?}", out.status);
}

fn which_cc() -> Result<String, ()> {
    for c in ["cc", "gcc", "clang"] {
        if std::process::Command::new(c).arg("--version").output().is_ok() {
            return Ok(c.into());
        }
    }
    Err(())
}

fn tempfile_dir() -> PathBuf {
    let d = std::env::temp_dir().join(format!("paraprec-ffi-{}", std::process::id()));
    std::fs::create_dir_all(&d).unwrap();
    d
}
