use std::ffi::{CStr, CString};
use std::ptr;

use neural_collapse_ffi::*;

fn last_error() -> String {
    let p = nc_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

/// Scalar two-class pack: class 0 at {0, 2}, class 1 at {4, 6}.
fn scalar_pack() -> *mut NcPack {
    let data = [0.0, 2.0, 4.0, 6.0];
    let mut pack = ptr::null_mut();
    let status = unsafe { nc_pack_new(1, 2, 2, data.as_ptr(), &mut pack) };
    assert_eq!(status, NcStatus::Ok);
    assert!(nc_last_error_message().is_null());
    pack
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(nc_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn scalar_moments_through_handles() {
    let pack = scalar_pack();
    let (mut p, mut c, mut n) = (0, 0, 0);
    assert_eq!(unsafe { nc_pack_dims(pack, &mut p, &mut c, &mut n) }, NcStatus::Ok);
    assert_eq!((p, c, n), (1, 2, 2));

    let mut m = ptr::null_mut();
    assert_eq!(unsafe { nc_moments_compute(pack, &mut m) }, NcStatus::Ok);
    let mut mu = [0.0];
    assert_eq!(
        unsafe { nc_moments_copy_global_mean(m, mu.as_mut_ptr(), 1) },
        NcStatus::Ok
    );
    assert_eq!(mu[0], 3.0);
    let mut cov = [0.0];
    for (which, expected) in [
        (NcCovariance::Total, 5.0),
        (NcCovariance::Between, 4.0),
        (NcCovariance::Within, 1.0),
    ] {
        assert_eq!(
            unsafe { nc_moments_copy_covariance(m, which, cov.as_mut_ptr(), 1) },
            NcStatus::Ok
        );
        assert!((cov[0] - expected).abs() < 1e-12, "{which:?}");
    }
    let mut nc1 = 0.0;
    assert_eq!(unsafe { nc_nc1(m, 0.0, &mut nc1) }, NcStatus::Ok);
    // Tr(1 · 4⁻¹) / 2
    assert!((nc1 - 0.125).abs() < 1e-12);

    let mut clf = ptr::null_mut();
    assert_eq!(unsafe { nc_webb_lowe(m, 0.0, &mut clf) }, NcStatus::Ok);
    let (mut w, mut b) = ([0.0; 2], [0.0; 2]);
    assert_eq!(
        unsafe { nc_classifier_copy(clf, w.as_mut_ptr(), 2, b.as_mut_ptr(), 2) },
        NcStatus::Ok
    );
    // W = (1/C) Ṁᵀ Σ_T† with Ṁ = [-2, 2], Σ_T = 5.
    assert!((w[0] + 0.2).abs() < 1e-12 && (w[1] - 0.2).abs() < 1e-12);
    assert!((b[0] - 1.1).abs() < 1e-12 && (b[1] + 0.1).abs() < 1e-12);

    let mut gap = -1.0;
    assert_eq!(unsafe { nc_duality_gap(m, clf, &mut gap) }, NcStatus::Ok);
    assert!(gap.abs() < 1e-12);
    let mut mismatch = -1.0;
    assert_eq!(unsafe { nc_ncc_mismatch(clf, m, pack, &mut mismatch) }, NcStatus::Ok);
    assert_eq!(mismatch, 0.0);

    unsafe {
        nc_classifier_free(clf);
        nc_moments_free(m);
        nc_pack_free(pack);
    }
}

#[test]
fn file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let pack_path = CString::new(dir.path().join("a.ncap").to_str().unwrap()).unwrap();
    let clf_path = CString::new(dir.path().join("a.nclf").to_str().unwrap()).unwrap();

    let pack = scalar_pack();
    assert_eq!(unsafe { nc_pack_write_file(pack, pack_path.as_ptr()) }, NcStatus::Ok);
    let mut back = ptr::null_mut();
    assert_eq!(
        unsafe { nc_pack_read_file(pack_path.as_ptr(), &mut back) },
        NcStatus::Ok
    );
    let (mut p, mut c, mut n) = (0, 0, 0);
    assert_eq!(unsafe { nc_pack_dims(back, &mut p, &mut c, &mut n) }, NcStatus::Ok);
    assert_eq!((p, c, n), (1, 2, 2));

    let (w, b) = ([1.0, -2.0, 0.5, 3.0, 0.0, 1.0], [0.25, -0.75]);
    let mut clf = ptr::null_mut();
    assert_eq!(
        unsafe { nc_classifier_new(2, 3, w.as_ptr(), b.as_ptr(), &mut clf) },
        NcStatus::Ok
    );
    assert_eq!(
        unsafe { nc_classifier_write_file(clf, clf_path.as_ptr()) },
        NcStatus::Ok
    );
    let mut clf2 = ptr::null_mut();
    assert_eq!(
        unsafe { nc_classifier_read_file(clf_path.as_ptr(), &mut clf2) },
        NcStatus::Ok
    );
    let (mut wc, mut bc) = ([0.0; 6], [0.0; 2]);
    assert_eq!(
        unsafe { nc_classifier_copy(clf2, wc.as_mut_ptr(), 6, bc.as_mut_ptr(), 2) },
        NcStatus::Ok
    );
    assert_eq!(wc, w);
    assert_eq!(bc, b);
    let (mut cc, mut pc) = (0, 0);
    assert_eq!(unsafe { nc_classifier_dims(clf2, &mut cc, &mut pc) }, NcStatus::Ok);
    assert_eq!((cc, pc), (2, 3));

    unsafe {
        nc_classifier_free(clf);
        nc_classifier_free(clf2);
        nc_pack_free(back);
        nc_pack_free(pack);
    }
}

#[test]
fn etf_and_codec() {
    let c = 4usize;
    let mut m = vec![0.0; c * c];
    assert_eq!(unsafe { nc_standard_etf(c, m.as_mut_ptr(), m.len()) }, NcStatus::Ok);
    let scale = (c as f64 / (c as f64 - 1.0)).sqrt();
    for i in 0..c {
        for j in 0..c {
            let expected = scale * (if i == j { 1.0 } else { 0.0 } - 1.0 / c as f64);
            assert!((m[i * c + j] - expected).abs() < 1e-14);
        }
    }
    // The standard ETF is symmetric, so its row-major buffer is also its
    // transpose: decoder W = Mᵀ with zero bias.
    let bias = vec![0.0; c];
    let mut beta = 0.0;
    assert_eq!(
        unsafe { nc_analytic_exponent(c, m.as_ptr(), m.as_ptr(), bias.as_ptr(), &mut beta) },
        NcStatus::Ok
    );
    assert!((beta - c as f64 / (4.0 * (c as f64 - 1.0))).abs() < 1e-12);

    let (mut errors, mut rate, mut ci) = (0u64, 0.0, 0.0);
    assert_eq!(
        unsafe { nc_codec_simulate(2, 0.4, 200_000, 11, &mut errors, &mut rate, &mut ci) },
        NcStatus::Ok
    );
    let q = 0.006_209_665_325_776_132;
    assert!((rate - q).abs() < 4.0 * ci, "rate {rate} ci {ci}");
    assert_eq!(rate, errors as f64 / 200_000.0);
}

#[test]
fn errors_set_status_and_message() {
    let mut pack = ptr::null_mut();
    let status = unsafe { nc_pack_new(1, 2, 2, ptr::null(), &mut pack) };
    assert_eq!(status, NcStatus::NullPointer);
    assert!(last_error().contains("data"));
    assert!(pack.is_null());

    let bad = [0.0, f64::NAN, 1.0, 2.0];
    assert_eq!(
        unsafe { nc_pack_new(1, 2, 2, bad.as_ptr(), &mut pack) },
        NcStatus::Format
    );
    assert!(last_error().contains("non-finite"));

    let missing = CString::new("/nonexistent/x.ncap").unwrap();
    assert_eq!(unsafe { nc_pack_read_file(missing.as_ptr(), &mut pack) }, NcStatus::Io);

    let mut small = [0.0; 3];
    assert_eq!(
        unsafe { nc_standard_etf(2, small.as_mut_ptr(), small.len()) },
        NcStatus::BufferTooSmall
    );
    assert_eq!(
        unsafe { nc_standard_etf(1, small.as_mut_ptr(), small.len()) },
        NcStatus::InvalidArgument
    );

    let p = scalar_pack();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { nc_moments_compute(p, &mut m) }, NcStatus::Ok);
    let mut out = 0.0;
    assert_eq!(unsafe { nc_nc1(m, -1.0, &mut out) }, NcStatus::InvalidArgument);
    let (w, b) = ([1.0, 1.0, 1.0, 1.0], [0.0, 0.0]);
    let mut clf = ptr::null_mut();
    assert_eq!(
        unsafe { nc_classifier_new(2, 2, w.as_ptr(), b.as_ptr(), &mut clf) },
        NcStatus::Ok
    );
    assert_eq!(unsafe { nc_duality_gap(m, clf, &mut out) }, NcStatus::DimensionMismatch);
    assert_eq!(
        unsafe { nc_duality_gap(ptr::null(), clf, &mut out) },
        NcStatus::NullPointer
    );
    unsafe {
        nc_classifier_free(clf);
        nc_moments_free(m);
        nc_pack_free(p);
        nc_pack_free(ptr::null_mut());
    }
}

#[test]
fn header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/neural_collapse.h");
    let text = std::fs::read_to_string(header).unwrap();
    for symbol in [
        "nc_pack_new",
        "nc_moments_compute",
        "nc_webb_lowe",
        "nc_codec_simulate",
        "NC_STATUS_PANIC",
    ] {
        assert!(text.contains(symbol), "{symbol} missing from header");
    }
    let Ok(status) = std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-x", "c", header])
        .status()
    else {
        eprintln!("no C compiler available; skipped syntax check");
        return;
    };
    assert!(status.success());
}
