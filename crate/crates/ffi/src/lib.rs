//! C ABI over the `qutrit` crate.
//!
//! Objects are opaque handles created by `qutrit_*_new` style calls and
//! released with the matching `_free`. Every fallible call returns a
//! [`QutritStatus`]; on failure the message is kept per thread and can be
//! read with [`qutrit_last_error_message`]. Panics never cross the boundary.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use qutrit::cavity::{ReadoutSettings, ReadoutTrace};
use qutrit::config::{ConfigError, RunConfig};
use qutrit::device::DeviceParams;
use qutrit::experiments::{tomography_once, Context, NoiseModel, TomographySetup};
use qutrit::linalg::{c, Vec3};
use qutrit::pulse::PulseShape;
use qutrit::reconstruction::{reconstruct, tomography_rotations, MeasurementOperator, MleOptions, TomographyRecord};
use qutrit::state::DensityMatrix3;
use qutrit::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QutritStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    /// Parameters outside the model's validity (dispersive limit, photon
    /// number, dephasing, rank) or a failed integration.
    Physics = 4,
    NotConverged = 5,
    Panic = 6,
}

/// Device, readout and pulse settings with their calibrations.
pub struct QutritContext {
    ctx: Context,
}

/// One simulated readout trace.
pub struct QutritTrace {
    trace: ReadoutTrace,
}

/// Result of a simulated tomography run.
pub struct QutritTomography {
    estimate: DensityMatrix3,
    fidelity: f64,
    preparation_fidelity: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> QutritStatus {
    match e {
        Error::InvalidParameter { .. } | Error::NotNormalized(_) | Error::GridMismatch(_) => {
            QutritStatus::InvalidArgument
        }
        Error::NotConverged { .. } | Error::Fit(_) => QutritStatus::NotConverged,
        _ => QutritStatus::Physics,
    }
}

fn fail(status: QutritStatus, msg: impl Into<String>) -> QutritStatus {
    set_error(msg.into());
    status
}

/// Runs `f`, recording its error or panic.
fn guard(f: impl FnOnce() -> Result<(), QutritStatus>) -> QutritStatus {
    set_error(String::new());
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => QutritStatus::Ok,
        Ok(Err(s)) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(QutritStatus::Panic, format!("panic: {msg}"))
        }
    }
}

fn core(e: Error) -> QutritStatus {
    fail(status_of(&e), e.to_string())
}

fn config(e: ConfigError) -> QutritStatus {
    match e {
        ConfigError::Invalid(e) => core(e),
        other => fail(QutritStatus::Config, other.to_string()),
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), QutritStatus> {
    if p.is_null() {
        Err(fail(QutritStatus::NullPointer, format!("`{name}` is null")))
    } else {
        Ok(())
    }
}

unsafe fn array<const N: usize>(p: *const f64, name: &str) -> Result<[f64; N], QutritStatus> {
    non_null(p, name)?;
    Ok(std::array::from_fn(|k| *p.add(k)))
}

fn boxed<T>(value: T, out: *mut *mut T) {
    unsafe { *out = Box::into_raw(Box::new(value)) };
}

/// Copies the last error message of this thread into `buf` (NUL
/// terminated, truncated to `len`). Returns the full message length
/// without the terminator; 0 when the last call succeeded.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn qutrit_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn qutrit_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Context with the built-in device, readout and pulse defaults.
///
/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn qutrit_context_new_default(out: *mut *mut QutritContext) -> QutritStatus {
    guard(|| {
        non_null(out, "out")?;
        let ctx = Context::new(
            DeviceParams::default(),
            ReadoutSettings::default(),
            PulseShape::default(),
            None,
        )
        .map_err(core)?;
        boxed(QutritContext { ctx }, out);
        Ok(())
    })
}

/// Context from a TOML run configuration held in memory.
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn qutrit_context_from_toml(toml: *const c_char, out: *mut *mut QutritContext) -> QutritStatus {
    guard(|| {
        non_null(toml, "toml")?;
        non_null(out, "out")?;
        let text = CStr::from_ptr(toml)
            .to_str()
            .map_err(|e| fail(QutritStatus::InvalidArgument, format!("config is not UTF-8: {e}")))?;
        let cfg = RunConfig::from_toml(text, "<memory>").map_err(config)?;
        let ctx = cfg.context().map_err(core)?;
        boxed(QutritContext { ctx }, out);
        Ok(())
    })
}

/// # Safety
/// `ctx` must be null or a handle from this library, not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn qutrit_context_free(ctx: *mut QutritContext) {
    if !ctx.is_null() {
        drop(Box::from_raw(ctx));
    }
}

/// Cavity pulls χ of the three levels in MHz.
///
/// # Safety
/// `ctx` must be a live handle; `out` must hold 3 doubles.
#[no_mangle]
pub unsafe extern "C" fn qutrit_dispersive_shifts(ctx: *const QutritContext, out: *mut f64) -> QutritStatus {
    guard(|| {
        non_null(ctx, "ctx")?;
        non_null(out, "out")?;
        let s = (*ctx).ctx.spectrum.shifts();
        ptr::copy_nonoverlapping(s.as_ptr(), out, 3);
        Ok(())
    })
}

/// Integrated in-phase signals of the three basis-state references.
///
/// # Safety
/// `ctx` must be a live handle; `out` must hold 3 doubles.
#[no_mangle]
pub unsafe extern "C" fn qutrit_measurement_operator(ctx: *const QutritContext, out: *mut f64) -> QutritStatus {
    guard(|| {
        non_null(ctx, "ctx")?;
        non_null(out, "out")?;
        let m = (*ctx).ctx.measurement_operator().map_err(core)?;
        ptr::copy_nonoverlapping(m.m_values.as_ptr(), out, 3);
        Ok(())
    })
}

/// Readout of a mixture with level populations `populations[3]`.
///
/// # Safety
/// `ctx` must be a live handle, `populations` 3 doubles, `out` a handle slot.
#[no_mangle]
pub unsafe extern "C" fn qutrit_readout(
    ctx: *const QutritContext,
    populations: *const f64,
    out: *mut *mut QutritTrace,
) -> QutritStatus {
    guard(|| {
        non_null(ctx, "ctx")?;
        non_null(out, "out")?;
        let p: [f64; 3] = array(populations, "populations")?;
        if p.iter().any(|v| !(*v >= 0.0)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(fail(
                QutritStatus::InvalidArgument,
                "populations must be non-negative and sum to 1",
            ));
        }
        let trace = (*ctx).ctx.readout(p).map_err(core)?;
        boxed(QutritTrace { trace }, out);
        Ok(())
    })
}

/// Number of samples in a trace; 0 for a null handle.
///
/// # Safety
/// `trace` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qutrit_trace_len(trace: *const QutritTrace) -> usize {
    if trace.is_null() {
        0
    } else {
        (*trace).trace.len()
    }
}

/// Copies times (ns) and the I and Q quadratures. Each non-null buffer must
/// hold `len` doubles, and `len` must equal [`qutrit_trace_len`].
///
/// # Safety
/// `trace` must be a live handle; buffers null or `len` doubles long.
#[no_mangle]
pub unsafe extern "C" fn qutrit_trace_copy(
    trace: *const QutritTrace,
    times: *mut f64,
    i_quad: *mut f64,
    q_quad: *mut f64,
    len: usize,
) -> QutritStatus {
    guard(|| {
        non_null(trace, "trace")?;
        let t = &(*trace).trace;
        if len != t.len() {
            return Err(fail(
                QutritStatus::InvalidArgument,
                format!("buffer length {len}, trace has {}", t.len()),
            ));
        }
        for (src, dst) in [(&t.times, times), (&t.i_quad, i_quad), (&t.q_quad, q_quad)] {
            if !dst.is_null() {
                ptr::copy_nonoverlapping(src.as_ptr(), dst, len);
            }
        }
        Ok(())
    })
}

/// # Safety
/// `trace` must be null or a handle from this library, not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn qutrit_trace_free(trace: *mut QutritTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}

/// Prepares the pure state with amplitudes `re[k] + i·im[k]`, simulates
/// the nine tomography measurements with Gaussian noise of relative
/// size `sigma_rel`, and reconstructs by maximum likelihood.
///
/// # Safety
/// `ctx` must be a live handle, `re` and `im` 3 doubles each, `out` a slot.
#[no_mangle]
pub unsafe extern "C" fn qutrit_tomography(
    ctx: *const QutritContext,
    re: *const f64,
    im: *const f64,
    sigma_rel: f64,
    seed: u64,
    out: *mut *mut QutritTomography,
) -> QutritStatus {
    guard(|| {
        non_null(ctx, "ctx")?;
        non_null(out, "out")?;
        let re: [f64; 3] = array(re, "re")?;
        let im: [f64; 3] = array(im, "im")?;
        if !(sigma_rel >= 0.0) || !sigma_rel.is_finite() {
            return Err(fail(
                QutritStatus::InvalidArgument,
                "sigma_rel must be finite and non-negative",
            ));
        }
        let ctx = &(*ctx).ctx;
        let target = Vec3::new(c(re[0], im[0]), c(re[1], im[1]), c(re[2], im[2]));
        let setup = TomographySetup::new(ctx).map_err(core)?;
        let noise = NoiseModel {
            sigma_rel,
            bootstrap: 0,
        };
        let o = tomography_once(ctx, &setup, &target, &noise, seed).map_err(core)?;
        boxed(
            QutritTomography {
                estimate: o.estimate,
                fidelity: o.fidelity,
                preparation_fidelity: o.preparation_fidelity,
            },
            out,
        );
        Ok(())
    })
}

/// Fidelity of the reconstruction to the target; NaN for a null handle.
///
/// # Safety
/// `tomo` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qutrit_tomography_fidelity(tomo: *const QutritTomography) -> f64 {
    if tomo.is_null() {
        f64::NAN
    } else {
        (*tomo).fidelity
    }
}

/// Fidelity of the prepared state before tomography; NaN for a null handle.
///
/// # Safety
/// `tomo` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qutrit_tomography_preparation_fidelity(tomo: *const QutritTomography) -> f64 {
    if tomo.is_null() {
        f64::NAN
    } else {
        (*tomo).preparation_fidelity
    }
}

/// Reconstructed ρ, row-major, as 9 real and 9 imaginary parts.
///
/// # Safety
/// `tomo` must be a live handle; `re` and `im` must hold 9 doubles each.
#[no_mangle]
pub unsafe extern "C" fn qutrit_tomography_density_matrix(
    tomo: *const QutritTomography,
    re: *mut f64,
    im: *mut f64,
) -> QutritStatus {
    guard(|| {
        non_null(tomo, "tomo")?;
        write_matrix(&(*tomo).estimate, re, im)
    })
}

/// # Safety
/// `tomo` must be null or a handle from this library, not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn qutrit_tomography_free(tomo: *mut QutritTomography) {
    if !tomo.is_null() {
        drop(Box::from_raw(tomo));
    }
}

unsafe fn write_matrix(rho: &DensityMatrix3, re: *mut f64, im: *mut f64) -> Result<(), QutritStatus> {
    non_null(re, "re")?;
    non_null(im, "im")?;
    let m = rho.matrix();
    for i in 0..3 {
        for j in 0..3 {
            *re.add(3 * i + j) = m[(i, j)].re;
            *im.add(3 * i + j) = m[(i, j)].im;
        }
    }
    Ok(())
}

/// Maximum-likelihood ρ from nine integrated signals `values` with
/// standard errors `sigmas`, given the measurement operator eigenvalues
/// `m[3]` and the standard pre-rotations. Writes ρ row-major.
///
/// # Safety
/// `values` and `sigmas` must hold 9 doubles, `m` 3, `re` and `im` 9 each.
#[no_mangle]
pub unsafe extern "C" fn qutrit_reconstruct(
    values: *const f64,
    sigmas: *const f64,
    m: *const f64,
    re: *mut f64,
    im: *mut f64,
) -> QutritStatus {
    guard(|| {
        let values: [f64; 9] = array(values, "values")?;
        let sigmas: [f64; 9] = array(sigmas, "sigmas")?;
        let m: [f64; 3] = array(m, "m")?;
        let ops = MeasurementOperator::new(m, 0.0);
        let record = TomographyRecord::new(values, sigmas).map_err(core)?;
        let est = reconstruct(&record, &ops, &tomography_rotations(), &MleOptions::default()).map_err(core)?;
        write_matrix(&est.rho, re, im)
    })
}
