use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use qutrit::reconstruction::{expected_values, tomography_rotations, MeasurementOperator};
use qutrit::state::DensityMatrix3;
use qutrit_ffi::*;

const M: [f64; 3] = [-49.3, -131.9, 141.6];

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 512];
    let n = unsafe { qutrit_last_error_message(buf.as_mut_ptr(), buf.len()) };
    let s = unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned();
    assert_eq!(n, s.len());
    s
}

fn default_context() -> *mut QutritContext {
    let mut ctx = ptr::null_mut();
    assert_eq!(unsafe { qutrit_context_new_default(&mut ctx) }, QutritStatus::Ok);
    assert!(!ctx.is_null());
    ctx
}

#[test]
fn version_matches_the_crate() {
    let v = unsafe { CStr::from_ptr(qutrit_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn default_context_reports_the_model_pulls() {
    let ctx = default_context();
    let mut s = [0.0; 3];
    assert_eq!(
        unsafe { qutrit_dispersive_shifts(ctx, s.as_mut_ptr()) },
        QutritStatus::Ok
    );
    for (got, want) in s.iter().zip([10.027, 6.698, 3.993]) {
        assert!((got - want).abs() < 5e-4, "{s:?}");
    }
    assert!(last_error().is_empty());
    unsafe { qutrit_context_free(ctx) };
}

#[test]
fn null_arguments_are_rejected() {
    let mut s = [0.0; 3];
    assert_eq!(
        unsafe { qutrit_dispersive_shifts(ptr::null(), s.as_mut_ptr()) },
        QutritStatus::NullPointer
    );
    assert!(last_error().contains("ctx"));
    assert_eq!(
        unsafe { qutrit_context_new_default(ptr::null_mut()) },
        QutritStatus::NullPointer
    );
    assert_eq!(unsafe { qutrit_trace_len(ptr::null()) }, 0);
    assert!(unsafe { qutrit_tomography_fidelity(ptr::null()) }.is_nan());
    // freeing null is a no-op
    unsafe {
        qutrit_context_free(ptr::null_mut());
        qutrit_trace_free(ptr::null_mut());
        qutrit_tomography_free(ptr::null_mut());
    }
}

#[test]
fn config_errors_map_to_status_codes() {
    let mut ctx = ptr::null_mut();
    let bad_key = CString::new("seed = 1\nspeed = 2\n").unwrap();
    assert_eq!(
        unsafe { qutrit_context_from_toml(bad_key.as_ptr(), &mut ctx) },
        QutritStatus::Config
    );
    assert!(last_error().contains("speed"));
    assert!(ctx.is_null());

    let bad_physics = CString::new("[device]\nkappa_MHz = -1.0\n").unwrap();
    assert_eq!(
        unsafe { qutrit_context_from_toml(bad_physics.as_ptr(), &mut ctx) },
        QutritStatus::InvalidArgument
    );
    assert!(last_error().contains("kappa_MHz"));

    let far = CString::new("[device]\nomega_01_MHz = 6900.0\n").unwrap();
    assert_eq!(
        unsafe { qutrit_context_from_toml(far.as_ptr(), &mut ctx) },
        QutritStatus::Physics
    );
    assert!(ctx.is_null());

    let ok = CString::new("shifts_MHz = [10.0, 5.9, 3.4]\n").unwrap();
    assert_eq!(
        unsafe { qutrit_context_from_toml(ok.as_ptr(), &mut ctx) },
        QutritStatus::Ok
    );
    let mut s = [0.0; 3];
    assert_eq!(
        unsafe { qutrit_dispersive_shifts(ctx, s.as_mut_ptr()) },
        QutritStatus::Ok
    );
    assert_eq!(s, [10.0, 5.9, 3.4]);
    unsafe { qutrit_context_free(ctx) };
}

#[test]
fn readout_trace_round_trips() {
    let ctx = default_context();
    let mut trace = ptr::null_mut();
    let bad = [0.5, 0.5, 0.5];
    assert_eq!(
        unsafe { qutrit_readout(ctx, bad.as_ptr(), &mut trace) },
        QutritStatus::InvalidArgument
    );
    assert!(trace.is_null());

    let p = [0.0, 1.0, 0.0];
    assert_eq!(unsafe { qutrit_readout(ctx, p.as_ptr(), &mut trace) }, QutritStatus::Ok);
    let n = unsafe { qutrit_trace_len(trace) };
    let (mut t, mut i, mut q) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    assert_eq!(
        unsafe { qutrit_trace_copy(trace, t.as_mut_ptr(), i.as_mut_ptr(), q.as_mut_ptr(), n - 1) },
        QutritStatus::InvalidArgument
    );
    assert_eq!(
        unsafe { qutrit_trace_copy(trace, t.as_mut_ptr(), i.as_mut_ptr(), q.as_mut_ptr(), n) },
        QutritStatus::Ok
    );
    // the same readout through the Rust API
    let direct = qutrit::experiments::Context::new(Default::default(), Default::default(), Default::default(), None)
        .unwrap()
        .readout(p)
        .unwrap();
    assert_eq!(t, direct.times);
    assert_eq!(i, direct.i_quad);
    assert_eq!(q, direct.q_quad);
    unsafe {
        qutrit_trace_free(trace);
        qutrit_context_free(ctx);
    }
}

#[test]
fn reconstruct_recovers_a_known_state() {
    let rho = DensityMatrix3::from_cholesky_params(&[0.9, 0.4, 0.2, 0.1, -0.3, 0.05, 0.2, -0.1, 0.0]);
    let values = expected_values(&rho, &MeasurementOperator::new(M, 500.0), &tomography_rotations());
    let sigmas = [1.0; 9];
    let (mut re, mut im) = ([0.0; 9], [0.0; 9]);
    let status = unsafe {
        qutrit_reconstruct(
            values.as_ptr(),
            sigmas.as_ptr(),
            M.as_ptr(),
            re.as_mut_ptr(),
            im.as_mut_ptr(),
        )
    };
    assert_eq!(status, QutritStatus::Ok, "{}", last_error());
    let m = rho.matrix();
    for k in 0..9 {
        assert!((re[k] - m[(k / 3, k % 3)].re).abs() < 1e-6, "{re:?}");
        assert!((im[k] - m[(k / 3, k % 3)].im).abs() < 1e-6, "{im:?}");
    }

    let flat = [2.0; 3];
    let status = unsafe {
        qutrit_reconstruct(
            values.as_ptr(),
            sigmas.as_ptr(),
            flat.as_ptr(),
            re.as_mut_ptr(),
            im.as_mut_ptr(),
        )
    };
    assert_eq!(status, QutritStatus::Physics);
    assert!(last_error().contains("rank"));

    let zero = [0.0; 9];
    let status = unsafe {
        qutrit_reconstruct(
            values.as_ptr(),
            zero.as_ptr(),
            M.as_ptr(),
            re.as_mut_ptr(),
            im.as_mut_ptr(),
        )
    };
    assert_eq!(status, QutritStatus::InvalidArgument);
}

#[test]
fn tomography_through_handles() {
    let ctx = default_context();
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let (re, im) = ([0.0, h, -h], [0.0; 3]);
    let mut tomo = ptr::null_mut();
    let status = unsafe { qutrit_tomography(ctx, re.as_ptr(), im.as_ptr(), 0.0, 1, &mut tomo) };
    assert_eq!(status, QutritStatus::Ok, "{}", last_error());
    let f = unsafe { qutrit_tomography_fidelity(tomo) };
    let prep = unsafe { qutrit_tomography_preparation_fidelity(tomo) };
    assert!((f - prep).abs() < 0.02, "{f} vs {prep}");
    let (mut rr, mut ri) = ([0.0; 9], [0.0; 9]);
    assert_eq!(
        unsafe { qutrit_tomography_density_matrix(tomo, rr.as_mut_ptr(), ri.as_mut_ptr()) },
        QutritStatus::Ok
    );
    assert!((rr[0] + rr[4] + rr[8] - 1.0).abs() < 1e-10);
    assert!(ri[0].abs() + ri[4].abs() + ri[8].abs() < 1e-12);

    let zero = [0.0; 3];
    let mut none = ptr::null_mut();
    let status = unsafe { qutrit_tomography(ctx, zero.as_ptr(), zero.as_ptr(), 0.0, 1, &mut none) };
    assert_eq!(status, QutritStatus::InvalidArgument);
    assert!(none.is_null());
    unsafe {
        qutrit_tomography_free(tomo);
        qutrit_context_free(ctx);
    }
}

#[test]
fn error_message_truncates_and_clears() {
    let mut s = [0.0; 3];
    assert_eq!(
        unsafe { qutrit_dispersive_shifts(ptr::null(), s.as_mut_ptr()) },
        QutritStatus::NullPointer
    );
    let mut small = [1 as std::ffi::c_char; 4];
    let n = unsafe { qutrit_last_error_message(small.as_mut_ptr(), small.len()) };
    assert!(n > 3);
    assert_eq!(small[3], 0);
    assert_eq!(unsafe { qutrit_last_error_message(ptr::null_mut(), 0) }, n);
    let ctx = default_context();
    assert_eq!(unsafe { qutrit_last_error_message(ptr::null_mut(), 0) }, 0);
    unsafe { qutrit_context_free(ctx) };
}

fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

/// `cargo test` builds every crate type of the library next to the test
/// binary without copying it up into the profile directory.
fn artifact_dir() -> PathBuf {
    std::env::current_exe().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_links_against_the_static_library() {
    let lib = artifact_dir().join("libqutrit_ffi.a");
    assert!(lib.exists(), "missing {}", lib.display());
    let out = tempfile::tempdir().unwrap();
    let bin = out.path().join("smoke");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let status = Command::new(&cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(crate_dir().join("include"))
        .arg(crate_dir().join("tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .expect("C compiler runs");
    assert!(status.success());
    let run = Command::new(&bin).output().unwrap();
    assert!(run.status.success(), "exit {:?}", run.status.code());
    let stdout = String::from_utf8(run.stdout).unwrap();
    assert!(stdout.starts_with(env!("CARGO_PKG_VERSION")), "{stdout}");
}
