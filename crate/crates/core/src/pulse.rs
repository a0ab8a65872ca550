//! DRAG pulse synthesis and driven, dissipative qutrit dynamics.
//!
//! Dynamics are computed in the interaction picture of the bare transmon
//! (every level rotates at its own frequency). A drive resonant with one
//! transition then couples the other one with a phase e^{±iαt} set by the
//! anharmonicity α, which is what produces leakage and AC-Stark shifts.
//! Drive carriers are referenced to the absolute clock, so the phase of a
//! detuned pulse keeps track of the time elapsed since t = 0.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::device::{angular, DeviceParams};
use crate::error::{invalid, Error, Result};
use crate::linalg::{c, cis, Mat3, C64};
use crate::lindblad::{self, Superop};
use crate::optim::{self, NelderMeadOptions};
use crate::state::{normalized, DensityMatrix3, StateVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Transition {
    T01,
    T12,
}

impl Transition {
    /// Lower level of the addressed pair.
    pub fn lower(self) -> usize {
        match self {
            Transition::T01 => 0,
            Transition::T12 => 1,
        }
    }
}

/// Shape parameters shared by every pulse of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PulseShape {
    #[serde(rename = "sigma_ns")]
    pub sigma: f64,
    #[serde(rename = "length_ns")]
    pub length: f64,
    pub drag_coefficient: f64,
    /// Stark-tracking phase ramp on the drive.
    pub phase_ramp: bool,
    /// Run the three-level amplitude and frame calibration on each pulse.
    pub calibrate: bool,
    /// Magnus integration step.
    #[serde(rename = "step_ns")]
    pub step: f64,
}

impl Default for PulseShape {
    fn default() -> Self {
        Self {
            sigma: 3.0,
            length: 12.0,
            drag_coefficient: 1.0,
            phase_ramp: true,
            calibrate: true,
            step: 0.05,
        }
    }
}

impl PulseShape {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) {
            return Err(invalid("sigma_ns", "must be positive"));
        }
        if !(self.length > 0.0) {
            return Err(invalid("length_ns", "must be positive"));
        }
        if !(self.step > 0.0) {
            return Err(invalid("step_ns", "must be positive"));
        }
        if !self.drag_coefficient.is_finite() {
            return Err(invalid("drag_coefficient", "must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseSegment {
    pub transition: Transition,
    /// Target rotation angle, rad.
    pub angle: f64,
    /// Rotation axis, rad (0 = x, π/2 = y).
    pub axis_phase: f64,
    pub sigma: f64,
    pub length: f64,
    pub drag_coefficient: f64,
    /// Drive detuning from the addressed transition, MHz.
    pub detuning: f64,
    pub phase_ramp: bool,
    /// Correction on top of the two-level area calibration.
    pub amplitude_scale: f64,
    /// Overrides the calibrated peak amplitude, MHz.
    pub peak_amplitude: Option<f64>,
    /// Frame update diag(e^{iφₙ}) applied after the pulse.
    pub frame_correction: [f64; 3],
    /// Idle time before the pulse, ns.
    pub delay_before: f64,
}

impl PulseSegment {
    pub fn new(transition: Transition, angle: f64, shape: &PulseShape) -> Self {
        Self {
            transition,
            angle,
            axis_phase: 0.0,
            sigma: shape.sigma,
            length: shape.length,
            drag_coefficient: shape.drag_coefficient,
            detuning: 0.0,
            phase_ramp: shape.phase_ramp,
            amplitude_scale: 1.0,
            peak_amplitude: None,
            frame_correction: [0.0; 3],
            delay_before: 0.0,
        }
    }

    pub fn with_axis_phase(mut self, phase: f64) -> Self {
        self.axis_phase = phase;
        self
    }

    pub fn with_detuning(mut self, mhz: f64) -> Self {
        self.detuning = mhz;
        self
    }

    pub fn with_delay(mut self, ns: f64) -> Self {
        self.delay_before = ns;
        self
    }

    pub fn with_peak_amplitude(mut self, mhz: f64) -> Self {
        self.peak_amplitude = Some(mhz);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) {
            return Err(invalid("sigma", format!("must be positive, got {}", self.sigma)));
        }
        if !(self.length > 0.0) {
            return Err(invalid("length", format!("must be positive, got {}", self.length)));
        }
        if !(-2.0 * PI - 1e-12..=2.0 * PI + 1e-12).contains(&self.angle) {
            return Err(invalid("angle", format!("{} outside [-2π, 2π]", self.angle)));
        }
        if !(self.delay_before >= 0.0) {
            return Err(invalid("delay_before", "must be non-negative"));
        }
        let finite = [
            self.axis_phase,
            self.drag_coefficient,
            self.detuning,
            self.amplitude_scale,
            self.peak_amplitude.unwrap_or(0.0),
        ];
        if finite.iter().any(|v| !v.is_finite()) || self.frame_correction.iter().any(|v| !v.is_finite()) {
            return Err(invalid("segment", "non-finite pulse parameter"));
        }
        Ok(())
    }

    fn is_idle(&self) -> bool {
        match self.peak_amplitude {
            Some(a) => a == 0.0,
            None => self.angle == 0.0,
        }
    }
}

/// Resolved analytic envelope of one segment, in pulse-local time τ ∈ [0, length].
#[derive(Debug, Clone)]
pub struct DragWaveform {
    peak: f64,
    sigma: f64,
    length: f64,
    offset: f64,
    drag_rate: f64,
    ramp_rate: f64,
    axis: C64,
    detuning: f64,
}

fn erf(x: f64) -> f64 {
    libm::erf(x)
}

impl DragWaveform {
    pub fn new(params: &DeviceParams, seg: &PulseSegment) -> Result<Self> {
        seg.validate()?;
        let sigma = seg.sigma;
        let length = seg.length;
        let mu = 0.5 * length;
        let offset = (-(mu * mu) / (2.0 * sigma * sigma)).exp();
        let gauss_area = sigma * (PI / 2.0).sqrt() * 2.0 * erf(mu / (sigma * 2f64.sqrt()));
        let area = (gauss_area - offset * length) / (1.0 - offset);
        if !(area > 0.0) || !area.is_finite() {
            return Err(invalid("envelope", "degenerate pulse area"));
        }

        let eta1 = params.eta1();
        let alpha = params.anharmonicity();
        // Coupling of the addressed pair, of the spurious pair relative to
        // it, and the spurious pair's detuning from the drive.
        let (addressed, spurious_ratio, spurious_detuning) = match seg.transition {
            Transition::T01 => (1.0, eta1, alpha),
            Transition::T12 => (eta1, 1.0 / eta1, -alpha),
        };
        let peak = match seg.peak_amplitude {
            Some(a) => a,
            None => seg.angle / (angular(1.0) * addressed * area) * seg.amplitude_scale,
        };
        let spurious = angular(spurious_detuning);
        let drag_rate = if spurious != 0.0 {
            seg.drag_coefficient / spurious
        } else {
            0.0
        };
        let ramp_rate = if seg.phase_ramp && spurious != 0.0 {
            -(spurious_ratio * spurious_ratio - 4.0) * (addressed * angular(peak)).powi(2) / (4.0 * spurious)
        } else {
            0.0
        };
        let wf = Self {
            peak,
            sigma,
            length,
            offset,
            drag_rate,
            ramp_rate,
            axis: cis(seg.axis_phase),
            detuning: angular(seg.detuning),
        };
        if !wf.peak.is_finite() {
            return Err(invalid("envelope", "non-finite amplitude"));
        }
        Ok(wf)
    }

    /// Peak of the in-phase quadrature, MHz.
    pub fn peak(&self) -> f64 {
        self.peak
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    fn gauss(&self, tau: f64) -> f64 {
        let x = tau - 0.5 * self.length;
        (-(x * x) / (2.0 * self.sigma * self.sigma)).exp()
    }

    /// Lifted Gaussian g(τ) with g(0) = g(length) = 0 and unit peak.
    fn shape(&self, tau: f64) -> f64 {
        (self.gauss(tau) - self.offset) / (1.0 - self.offset)
    }

    fn shape_derivative(&self, tau: f64) -> f64 {
        let x = tau - 0.5 * self.length;
        -x / (self.sigma * self.sigma) * self.gauss(tau) / (1.0 - self.offset)
    }

    /// ∫₀^τ g(t)² dt in closed form.
    fn shape_sq_integral(&self, tau: f64) -> f64 {
        let mu = 0.5 * self.length;
        let s = self.sigma;
        let int_g = s * (PI / 2.0).sqrt() * (erf((tau - mu) / (s * 2f64.sqrt())) + erf(mu / (s * 2f64.sqrt())));
        let int_g2 = 0.5 * s * PI.sqrt() * (erf((tau - mu) / s) + erf(mu / s));
        (int_g2 - 2.0 * self.offset * int_g + self.offset * self.offset * tau) / (1.0 - self.offset).powi(2)
    }

    /// Complex envelope Ωx + iΩy with axis phase, Stark ramp and detuning
    /// ramp applied, MHz. Zero outside the pulse.
    pub fn omega(&self, tau: f64) -> C64 {
        if !(0.0..=self.length).contains(&tau) {
            return c(0.0, 0.0);
        }
        let x = self.peak * self.shape(tau);
        let y = -self.drag_rate * self.peak * self.shape_derivative(tau);
        let ramp = if self.ramp_rate != 0.0 {
            self.ramp_rate * self.shape_sq_integral(tau)
        } else {
            0.0
        };
        c(x, y) * self.axis * cis(-ramp - self.detuning * tau)
    }

    /// Drive detuning in rad/ns.
    fn detuning(&self) -> f64 {
        self.detuning
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeSample {
    pub time: f64,
    pub omega: C64,
}

/// Samples the complex DRAG envelope every `dt` ns, endpoints included.
pub fn drag_envelope(params: &DeviceParams, seg: &PulseSegment, dt: f64) -> Result<Vec<EnvelopeSample>> {
    if !(dt > 0.0) {
        return Err(invalid("dt", "must be positive"));
    }
    let wf = DragWaveform::new(params, seg)?;
    let n = (seg.length / dt).round().max(1.0) as usize;
    let h = seg.length / n as f64;
    let samples: Vec<EnvelopeSample> = (0..=n)
        .map(|k| {
            let time = k as f64 * h;
            EnvelopeSample {
                time,
                omega: wf.omega(time),
            }
        })
        .collect();
    if samples
        .iter()
        .any(|s| !s.omega.re.is_finite() || !s.omega.im.is_finite())
    {
        return Err(invalid("envelope", "non-finite sample"));
    }
    Ok(samples)
}

/// Ideal rotation (θ)_a on the addressed pair:
/// exp(−iθ/2 (cos a·X + sin a·Y)).
pub fn rotation(transition: Transition, angle: f64, axis_phase: f64) -> Mat3 {
    let i = transition.lower();
    let j = i + 1;
    let (s, co) = (0.5 * angle).sin_cos();
    let mut u = Mat3::identity();
    u[(i, i)] = c(co, 0.0);
    u[(j, j)] = c(co, 0.0);
    u[(i, j)] = c(0.0, -s) * cis(-axis_phase);
    u[(j, i)] = c(0.0, -s) * cis(axis_phase);
    u
}

/// Drive Hamiltonian (rad/ns) of a segment starting at absolute time `t0`.
fn drive_hamiltonian(params: &DeviceParams, seg: &PulseSegment, wf: &DragWaveform, t0: f64) -> impl Fn(f64) -> Mat3 {
    let eta1 = params.eta1();
    let alpha = angular(params.anharmonicity());
    let carrier = cis(-wf.detuning() * t0);
    let transition = seg.transition;
    let wf = wf.clone();
    move |t: f64| {
        let omega = wf.omega(t - t0) * carrier;
        let (c01, c12) = match transition {
            Transition::T01 => (omega, omega * eta1 * cis(alpha * t)),
            Transition::T12 => (omega * cis(-alpha * t), omega * eta1),
        };
        let k = 0.5 * angular(1.0);
        let mut h = Mat3::zeros();
        h[(1, 0)] = c01 * k;
        h[(0, 1)] = c01.conj() * k;
        h[(2, 1)] = c12 * k;
        h[(1, 2)] = c12.conj() * k;
        h
    }
}

fn steps_for(length: f64, step: f64) -> usize {
    (length / step).ceil().max(1.0) as usize
}

/// Dissipation-free propagator of one segment (without its frame update).
pub fn segment_unitary(params: &DeviceParams, seg: &PulseSegment, t0: f64, step: f64) -> Result<Mat3> {
    let wf = DragWaveform::new(params, seg)?;
    let h = drive_hamiltonian(params, seg, &wf, t0);
    Ok(lindblad::evolve_unitary(
        &h,
        t0,
        seg.length,
        steps_for(seg.length, step),
    ))
}

/// Collapse operators: relaxation n → n−1 and per-level pure dephasing.
pub fn collapse_operators(params: &DeviceParams) -> Result<Vec<Mat3>> {
    let gamma = params.relaxation_rates();
    let dephasing = params.dephasing_rates()?;
    let mut ops = Vec::new();
    for n in 1..3 {
        if gamma[n] > 0.0 {
            let mut l = Mat3::zeros();
            l[(n - 1, n)] = c(gamma[n].sqrt(), 0.0);
            ops.push(l);
        }
        if dephasing[n] > 0.0 {
            let mut l = Mat3::zeros();
            l[(n, n)] = c((2.0 * dephasing[n]).sqrt(), 0.0);
            ops.push(l);
        }
    }
    Ok(ops)
}

fn frame_update(rho: &Mat3, phases: &[f64; 3]) -> Mat3 {
    if phases.iter().all(|p| *p == 0.0) {
        return *rho;
    }
    Mat3::from_fn(|i, j| rho[(i, j)] * cis(phases[i] - phases[j]))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagationOptions {
    pub include_dissipation: bool,
    pub step: f64,
    pub start_time: f64,
}

impl Default for PropagationOptions {
    fn default() -> Self {
        Self {
            include_dissipation: true,
            step: 0.05,
            start_time: 0.0,
        }
    }
}

pub type QutritState = DensityMatrix3;

/// Runs a pulse sequence on `state` starting at t = 0.
pub fn propagate(
    params: &DeviceParams,
    state: &DensityMatrix3,
    sequence: &[PulseSegment],
    include_dissipation: bool,
) -> Result<DensityMatrix3> {
    propagate_with(
        params,
        state,
        sequence,
        &PropagationOptions {
            include_dissipation,
            ..Default::default()
        },
    )
}

pub fn propagate_with(
    params: &DeviceParams,
    state: &DensityMatrix3,
    sequence: &[PulseSegment],
    opts: &PropagationOptions,
) -> Result<DensityMatrix3> {
    params.validate()?;
    if !(opts.step > 0.0) {
        return Err(invalid("step_ns", "must be positive"));
    }
    let dissipation = if opts.include_dissipation {
        lindblad::dissipator(&collapse_operators(params)?)
    } else {
        Superop::zeros()
    };
    let mut rho = *state.matrix();
    let mut t = opts.start_time;
    for seg in sequence {
        seg.validate()?;
        if seg.delay_before > 0.0 {
            rho = lindblad::idle(&rho, &dissipation, seg.delay_before);
            t += seg.delay_before;
        }
        if seg.is_idle() {
            rho = lindblad::idle(&rho, &dissipation, seg.length);
        } else {
            let wf = DragWaveform::new(params, seg)?;
            let h = drive_hamiltonian(params, seg, &wf, t);
            rho = lindblad::evolve_density(&rho, &h, &dissipation, t, seg.length, steps_for(seg.length, opts.step));
        }
        rho = frame_update(&rho, &seg.frame_correction);
        t += seg.length;
    }
    Ok(DensityMatrix3(rho))
}

/// Frame phases φ maximizing Re Tr(U_target† diag(e^{iφ}) U).
fn frame_phases(actual: &Mat3, target: &Mat3) -> [f64; 3] {
    let d = actual * target.adjoint();
    std::array::from_fn(|n| -d[(n, n)].arg())
}

fn corrected_infidelity(actual: &Mat3, target: &Mat3) -> (f64, [f64; 3]) {
    let phases = frame_phases(actual, target);
    let z = Mat3::from_diagonal(&nalgebra::Vector3::from_fn(|n, _| cis(phases[n])));
    let overlap = (target.adjoint() * z * actual).trace();
    (1.0 - overlap.norm_sqr() / 9.0, phases)
}

/// Three-level calibration of a segment: refines the amplitude around the
/// two-level area calibration, and the DRAG coefficient when DRAG is on, then
/// records the frame update that aligns the phases of all three levels with
/// the ideal rotation. Resonant and dissipation-free, so the result does not
/// depend on when the pulse runs.
pub fn calibrate(params: &DeviceParams, seg: &PulseSegment, step: f64) -> Result<PulseSegment> {
    seg.validate()?;
    if seg.is_idle() || seg.peak_amplitude.is_some() {
        return Ok(seg.clone());
    }
    let target = rotation(seg.transition, seg.angle, seg.axis_phase);
    let tune_drag = seg.drag_coefficient != 0.0;
    let trial = |x: &[f64]| PulseSegment {
        amplitude_scale: x[0],
        drag_coefficient: if tune_drag { x[1] } else { seg.drag_coefficient },
        detuning: 0.0,
        frame_correction: [0.0; 3],
        delay_before: 0.0,
        ..seg.clone()
    };
    let probe = |x: &[f64]| -> Result<(f64, [f64; 3])> {
        let u = segment_unitary(params, &trial(x), 0.0, step)?;
        Ok(corrected_infidelity(&u, &target))
    };
    let (x0, steps) = if tune_drag {
        (
            vec![1.0, seg.drag_coefficient],
            vec![0.01, 0.1 * seg.drag_coefficient.abs()],
        )
    } else {
        (vec![1.0], vec![0.01])
    };
    let opts = NelderMeadOptions {
        tolerance: 1e-15,
        max_iterations: 2_000,
        ..NelderMeadOptions::new(steps)
    };
    let best = match optim::minimize(|x| probe(x).map(|r| r.0).unwrap_or(f64::INFINITY), &x0, &opts) {
        Ok(m) => m.x,
        // a stalled simplex still holds the best point found
        Err(Error::NotConverged { best, .. }) => best,
        Err(e) => return Err(e),
    };
    let (_, phases) = probe(&best)?;
    let tuned = trial(&best);
    Ok(PulseSegment {
        amplitude_scale: tuned.amplitude_scale,
        drag_coefficient: tuned.drag_coefficient,
        frame_correction: phases,
        ..seg.clone()
    })
}

/// Calibrates when the shape asks for it.
pub fn finalize(params: &DeviceParams, seg: PulseSegment, shape: &PulseShape) -> Result<PulseSegment> {
    if shape.calibrate {
        calibrate(params, &seg, shape.step)
    } else {
        Ok(seg)
    }
}

fn wrap_phase(p: f64) -> f64 {
    let w = (p + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        w + 2.0 * PI
    } else {
        w
    }
}

/// Rotation angles and axes (θ₀₁, φ₀₁, θ₁₂, φ₁₂) mapping |0⟩ to the target.
pub fn preparation_angles(target: &StateVector) -> Result<[f64; 4]> {
    let psi = normalized(*target)?;
    const EPS: f64 = 1e-12;
    let psi = if psi[0].norm() > EPS {
        psi * (psi[0].conj() / psi[0].norm())
    } else {
        psi
    };
    let (a0, a1, a2) = (psi[0].norm(), psi[1].norm(), psi[2].norm());
    let theta01 = 2.0 * a0.min(1.0).acos();
    let theta12 = 2.0 * a2.atan2(a1);
    let phi01 = if a1 > EPS {
        wrap_phase(psi[1].arg() + FRAC_PI_2)
    } else {
        0.0
    };
    let phi12 = if a2 > EPS {
        wrap_phase(psi[2].arg() - PI - phi01)
    } else {
        0.0
    };
    Ok([theta01, phi01, theta12, phi12])
}

#[derive(Debug, Clone)]
pub struct Preparation {
    pub sequence: Vec<PulseSegment>,
    pub achieved: DensityMatrix3,
}

/// Preparation of an arbitrary pure state by a 01 pulse followed by a 12
/// pulse; zero-angle pulses are omitted.
pub fn prepare_state(
    params: &DeviceParams,
    target: &StateVector,
    shape: &PulseShape,
    include_dissipation: bool,
) -> Result<Preparation> {
    shape.validate()?;
    let [t01, p01, t12, p12] = preparation_angles(target)?;
    let mut sequence = Vec::with_capacity(2);
    for (tr, theta, phi) in [(Transition::T01, t01, p01), (Transition::T12, t12, p12)] {
        // zero-angle slots are dropped rather than idled
        if theta != 0.0 {
            sequence.push(finalize(
                params,
                PulseSegment::new(tr, theta, shape).with_axis_phase(phi),
                shape,
            )?);
        }
    }
    let achieved = propagate_with(
        params,
        &DensityMatrix3::ground(),
        &sequence,
        &PropagationOptions {
            include_dissipation,
            step: shape.step,
            start_time: 0.0,
        },
    )?;
    Ok(Preparation { sequence, achieved })
}

/// Population of |2⟩ after a π pulse on 0↔1 from |0⟩, for a plain Gaussian
/// and for first-order DRAG, without dissipation.
pub fn leakage_benchmark(params: &DeviceParams, sigma: f64, length: f64) -> Result<(f64, f64)> {
    let shape = |drag: f64, ramp: bool| PulseShape {
        sigma,
        length,
        drag_coefficient: drag,
        phase_ramp: ramp,
        calibrate: false,
        step: 0.05,
    };
    let leak = |shape: PulseShape| -> Result<f64> {
        let seg = PulseSegment::new(Transition::T01, PI, &shape);
        let rho = propagate(params, &DensityMatrix3::ground(), &[seg], false)?;
        Ok(rho.populations()[2])
    };
    Ok((leak(shape(0.0, false))?, leak(shape(1.0, true))?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{trace, Vec3};
    use crate::state::fidelity;

    fn ideal_shape() -> PulseShape {
        PulseShape::default()
    }

    /// Fine-step product of exact 2×2 exponentials on the addressed pair,
    /// driven by the x quadrature only.
    fn two_level_angle(params: &DeviceParams, seg: &PulseSegment) -> f64 {
        let samples = drag_envelope(params, seg, 1e-3).unwrap();
        let coupling = match seg.transition {
            Transition::T01 => 1.0,
            Transition::T12 => params.eta1(),
        };
        // Rotation about a fixed axis: angles add.
        let mut theta = 0.0;
        for w in samples.windows(2) {
            let dt = w[1].time - w[0].time;
            theta += angular(0.5 * (w[0].omega.re + w[1].omega.re)) * coupling * dt;
        }
        theta
    }

    #[test]
    fn zero_angle_is_zero_envelope() {
        let p = DeviceParams::reference();
        let seg = PulseSegment::new(Transition::T01, 0.0, &ideal_shape());
        assert!(drag_envelope(&p, &seg, 0.05)
            .unwrap()
            .iter()
            .all(|s| s.omega.norm() == 0.0));
    }

    #[test]
    fn drag_quadrature_vanishes_at_center() {
        let p = DeviceParams::reference();
        let shape = PulseShape {
            phase_ramp: false,
            ..ideal_shape()
        };
        let seg = PulseSegment::new(Transition::T01, PI, &shape);
        let wf = DragWaveform::new(&p, &seg).unwrap();
        let mid = wf.omega(6.0);
        assert!(mid.im.abs() < 1e-12 * mid.re.abs());
        // lifted to zero at the edges
        assert!(wf.omega(0.0).re.abs() < 1e-12);
        assert!(wf.omega(12.0).re.abs() < 1e-12);
        assert_eq!(wf.omega(12.5), c(0.0, 0.0));
    }

    #[test]
    fn area_calibration_reproduces_pi_in_two_level_oracle() {
        let p = DeviceParams::reference();
        let shape = PulseShape {
            drag_coefficient: 0.0,
            phase_ramp: false,
            ..ideal_shape()
        };
        for tr in [Transition::T01, Transition::T12] {
            let seg = PulseSegment::new(tr, PI, &shape);
            let theta = two_level_angle(&p, &seg);
            assert!((theta - PI).abs() < 1e-4, "{tr:?}: {theta}");
        }
    }

    #[test]
    fn plain_gaussian_matches_hand_built_envelope() {
        let p = DeviceParams::reference();
        let shape = PulseShape {
            drag_coefficient: 0.0,
            phase_ramp: false,
            ..ideal_shape()
        };
        let seg = PulseSegment::new(Transition::T01, PI, &shape);
        let wf = DragWaveform::new(&p, &seg).unwrap();
        let off = (-2.0f64).exp();
        for s in drag_envelope(&p, &seg, 0.5).unwrap() {
            let g = ((-(s.time - 6.0).powi(2) / 18.0).exp() - off) / (1.0 - off);
            assert_eq!(s.omega.im, 0.0);
            assert!((s.omega.re - wf.peak() * g).abs() < 1e-12 * wf.peak());
        }
    }

    #[test]
    fn rotation_conventions() {
        let u = rotation(Transition::T01, PI, 0.0);
        assert!((u[(1, 0)] - c(0.0, -1.0)).norm() < 1e-15);
        for (tr, th, ph) in [(Transition::T01, 0.7, 0.3), (Transition::T12, -2.0, 1.1)] {
            let u = rotation(tr, th, ph);
            assert!((u.adjoint() * u - Mat3::identity()).norm() < 1e-14);
        }
    }

    #[test]
    fn empty_sequence_is_identity() {
        let p = DeviceParams::reference();
        let psi = Vec3::new(c(0.6, 0.0), c(0.0, 0.8), c(0.0, 0.0));
        let rho = DensityMatrix3::pure(&psi);
        assert_eq!(propagate(&p, &rho, &[], false).unwrap(), rho);
    }

    #[test]
    fn ideal_pi_pulse_transfers_population() {
        let p = DeviceParams::reference();
        let seg = PulseSegment::new(Transition::T01, PI, &ideal_shape());
        let rho = propagate(&p, &DensityMatrix3::ground(), std::slice::from_ref(&seg), false).unwrap();
        assert!(rho.populations()[1] >= 0.9997, "{:?}", rho.populations());
        let cal = calibrate(&p, &seg, 0.05).unwrap();
        let rho = propagate(&p, &DensityMatrix3::ground(), &[cal], false).unwrap();
        assert!(rho.populations()[1] >= 0.9999, "{:?}", rho.populations());
    }

    #[test]
    fn calibrated_pulses_match_ideal_rotations() {
        let p = DeviceParams::reference();
        for tr in [Transition::T01, Transition::T12] {
            for angle in [PI, FRAC_PI_2] {
                let seg = calibrate(&p, &PulseSegment::new(tr, angle, &ideal_shape()), 0.05).unwrap();
                let u = segment_unitary(&p, &seg, 37.0, 0.05).unwrap();
                let z = Mat3::from_diagonal(&nalgebra::Vector3::from_fn(|n, _| cis(seg.frame_correction[n])));
                let target = rotation(tr, angle, 0.0);
                let fid = (target.adjoint() * z * u).trace().norm_sqr() / 9.0;
                assert!(1.0 - fid < 5e-5, "{tr:?} {angle}: {}", 1.0 - fid);
            }
        }
    }

    #[test]
    fn dissipation_free_propagation_is_unitary() {
        let p = DeviceParams::reference();
        let shape = ideal_shape();
        let psi = normalized(Vec3::new(c(0.5, 0.1), c(0.2, -0.7), c(-0.3, 0.3))).unwrap();
        let rho = DensityMatrix3::pure(&psi);
        let seq = [
            PulseSegment::new(Transition::T01, 1.1, &shape).with_axis_phase(0.4),
            PulseSegment::new(Transition::T12, -2.3, &shape)
                .with_delay(7.0)
                .with_detuning(3.0),
        ];
        let out = propagate(&p, &rho, &seq, false).unwrap();
        assert!((out.purity() - 1.0).abs() < 1e-9);
        assert!((out.trace() - 1.0).abs() < 1e-10);
        let out = propagate(&p, &rho, &seq, true).unwrap();
        out.check(1e-10, Some(1e-9)).unwrap();
        assert!(out.purity() < 1.0);
    }

    #[test]
    fn half_pi_pulses_compose() {
        let p = DeviceParams::reference();
        let shape = ideal_shape();
        let half = calibrate(&p, &PulseSegment::new(Transition::T01, FRAC_PI_2, &shape), 0.05).unwrap();
        let full = calibrate(&p, &PulseSegment::new(Transition::T01, PI, &shape), 0.05).unwrap();
        let a = propagate(&p, &DensityMatrix3::ground(), &[half.clone(), half], false).unwrap();
        let b = propagate(&p, &DensityMatrix3::ground(), &[full], false).unwrap();
        let f = trace(&(a.matrix() * b.matrix())).re;
        assert!(1.0 - f < 1e-5, "{}", 1.0 - f);
    }

    #[test]
    fn preparation_is_exact_without_dissipation() {
        let p = DeviceParams::reference();
        let shape = ideal_shape();
        let s2 = std::f64::consts::FRAC_1_SQRT_2;
        let s3 = 1.0 / 3f64.sqrt();
        let targets = [
            Vec3::new(c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)),
            Vec3::new(c(0.0, 0.0), c(s2, 0.0), c(-s2, 0.0)),
            Vec3::new(c(s3, 0.0), c(0.0, s3), c(-s3, 0.0)),
            Vec3::new(c(0.0, 0.0), c(0.0, 0.0), c(0.0, 1.0)),
        ];
        for psi in &targets {
            let [t01, p01, t12, p12] = preparation_angles(psi).unwrap();
            let ideal = rotation(Transition::T12, t12, p12) * rotation(Transition::T01, t01, p01);
            let reached = ideal * Vec3::new(c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0));
            assert!((1.0 - (psi.adjoint() * reached)[(0, 0)].norm_sqr()) < 1e-14);

            let prep = prepare_state(&p, psi, &shape, false).unwrap();
            assert_eq!(prep.sequence.len(), (t01 != 0.0) as usize + (t12 != 0.0) as usize);
            let f = fidelity(psi, &prep.achieved).unwrap();
            assert!(f > 0.9999, "{psi:?}: {f}");
        }
        let [t01, _, t12, _] = preparation_angles(&targets[0]).unwrap();
        assert_eq!((t01, t12), (0.0, 0.0));
        let [t01, p01, t12, p12] = preparation_angles(&targets[1]).unwrap();
        assert!((t01 - PI).abs() < 1e-12 && (t12 - FRAC_PI_2).abs() < 1e-12);
        assert!((p01 - FRAC_PI_2).abs() < 1e-12 && (p12 + FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn sequential_pi_pulses_reach_the_f_level_ceiling() {
        let p = DeviceParams::reference();
        let shape = ideal_shape();
        let seq = [
            calibrate(&p, &PulseSegment::new(Transition::T01, PI, &shape), 0.05).unwrap(),
            calibrate(&p, &PulseSegment::new(Transition::T12, PI, &shape), 0.05).unwrap(),
        ];
        let rho = propagate(&p, &DensityMatrix3::ground(), &seq, true).unwrap();
        let p2 = rho.populations()[2];
        assert!((0.96..=0.98).contains(&p2), "{p2}");
    }

    #[test]
    fn drag_suppresses_leakage() {
        let p = DeviceParams::reference();
        let (gauss, drag) = leakage_benchmark(&p, 3.0, 12.0).unwrap();
        assert!(drag < gauss / 10.0, "{gauss} {drag}");
        // Leakage of the plain Gaussian falls off with the anharmonicity.
        let far = DeviceParams {
            anharmonicity: Some(-1000.0),
            ..p
        };
        let (gauss_far, _) = leakage_benchmark(&far, 3.0, 12.0).unwrap();
        assert!(gauss_far < gauss, "{gauss_far} {gauss}");
    }

    #[test]
    fn inconsistent_dephasing_is_rejected() {
        let p = DeviceParams {
            t2: vec![1600.0, 2000.0],
            ..DeviceParams::reference()
        };
        let seg = PulseSegment::new(Transition::T01, PI, &ideal_shape());
        assert!(propagate(&p, &DensityMatrix3::ground(), std::slice::from_ref(&seg), true).is_err());
        assert!(propagate(&p, &DensityMatrix3::ground(), &[seg], false).is_ok());
    }

    #[test]
    fn axis_phase_shift_leaves_populations_invariant() {
        let p = DeviceParams::reference();
        let shape = ideal_shape();
        let psi = normalized(Vec3::new(c(0.3, 0.0), c(0.5, 0.5), c(0.1, -0.6))).unwrap();
        let run = |shift: f64| {
            let prep = preparation_angles(&psi).unwrap();
            let seq = [
                PulseSegment::new(Transition::T01, prep[0], &shape).with_axis_phase(prep[1] + shift),
                PulseSegment::new(Transition::T12, prep[2], &shape).with_axis_phase(prep[3] + shift),
                PulseSegment::new(Transition::T12, FRAC_PI_2, &shape).with_axis_phase(shift),
                PulseSegment::new(Transition::T01, PI, &shape).with_axis_phase(shift),
            ];
            propagate(&p, &DensityMatrix3::ground(), &seq, true)
                .unwrap()
                .populations()
        };
        let a = run(0.0);
        let b = run(0.9);
        for k in 0..3 {
            assert!((a[k] - b[k]).abs() < 1e-9, "{a:?} {b:?}");
        }
    }
}
