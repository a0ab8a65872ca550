//! End-to-end procedures: basis-state readout, decay maps, Rabi and Ramsey
//! calibrations, and state tomography with fidelity statistics.
//!
//! Every procedure is a deterministic function of its inputs and seed.
//! Sweep points run in parallel and are merged in grid order.

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, PI};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cavity::{reference_traces, simulate_readout, ReadoutSettings, ReadoutTrace};
use crate::device::{dispersive_spectrum, DeviceParams, DispersiveSpectrum};
use crate::error::{invalid, Error, Result};
use crate::fit::{self, FitResult};
use crate::linalg::{c, Vec3};
use crate::pulse::{
    finalize, prepare_state, propagate_with, DragWaveform, PropagationOptions, PulseSegment, PulseShape, Transition,
};
use crate::reconstruction::{
    self, bootstrap, integrate_in_phase, ols_populations, reconstruct, tomography_rotations, tomography_sequences,
    MeasurementOperator, MleOptions, TomographyRecord,
};
use crate::state::{fidelity, normalized, DensityMatrix3, StateVector};

/// Everything a procedure needs about the device and the measurement.
#[derive(Debug, Clone)]
pub struct Context {
    pub params: DeviceParams,
    pub spectrum: DispersiveSpectrum,
    pub readout: ReadoutSettings,
    pub shape: PulseShape,
    /// Integration window of the measurement operator, ns.
    pub window: f64,
}

impl Context {
    /// Validates all inputs. `shifts` replaces the computed cavity pulls.
    pub fn new(
        params: DeviceParams,
        readout: ReadoutSettings,
        shape: PulseShape,
        shifts: Option<[f64; 3]>,
    ) -> Result<Self> {
        params.validate()?;
        params.dephasing_rates()?;
        shape.validate()?;
        let mut spectrum = dispersive_spectrum(&params)?;
        if let Some(s) = shifts {
            if s.iter().any(|v| !v.is_finite()) {
                return Err(invalid("shifts_MHz", "must be finite"));
            }
            spectrum = spectrum.with_shifts(s);
        }
        readout.validate_against(&params, &spectrum)?;
        Ok(Self {
            params,
            spectrum,
            readout,
            shape,
            window: reconstruction::DEFAULT_WINDOW_NS,
        })
    }

    pub fn with_window(mut self, window: f64) -> Self {
        self.window = window;
        self
    }

    pub fn references(&self) -> Result<[ReadoutTrace; 3]> {
        reference_traces(&self.params, &self.spectrum, &self.readout)
    }

    pub fn measurement_operator(&self) -> Result<MeasurementOperator> {
        MeasurementOperator::from_references(&self.references()?, self.window)
    }

    fn propagation(&self) -> PropagationOptions {
        PropagationOptions {
            include_dissipation: true,
            step: self.shape.step,
            start_time: 0.0,
        }
    }

    /// Runs a pulse sequence from |0⟩ with dissipation.
    pub fn run_sequence(&self, sequence: &[PulseSegment]) -> Result<DensityMatrix3> {
        propagate_with(&self.params, &DensityMatrix3::ground(), sequence, &self.propagation())
    }

    pub fn readout(&self, populations: [f64; 3]) -> Result<ReadoutTrace> {
        simulate_readout(
            &self.params,
            &self.spectrum,
            &self.readout,
            clean_populations(populations),
        )
    }

    fn pulse(&self, transition: Transition, angle: f64, axis: f64) -> Result<PulseSegment> {
        finalize(
            &self.params,
            PulseSegment::new(transition, angle, &self.shape).with_axis_phase(axis),
            &self.shape,
        )
    }
}

/// Rounds away the O(1e-15) excursions that propagation leaves on the
/// probability simplex.
fn clean_populations(p: [f64; 3]) -> [f64; 3] {
    let q = p.map(|v| v.max(0.0));
    let s: f64 = q.iter().sum();
    q.map(|v| v / s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExperimentKind {
    ReadoutBasis,
    DecayMap,
    Rabi,
    Ramsey12,
    Tomography,
    FidelityBatch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepAxis {
    pub label: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    /// One trace per sweep point.
    Traces(Vec<ReadoutTrace>),
    /// Q(t) per sweep point on a shared time grid.
    QuadratureMap { times: Vec<f64>, q: Vec<Vec<f64>> },
    /// Reconstructed (p₀, p₁, p₂) per sweep point.
    Populations(Vec<[f64; 3]>),
    /// One reconstructed state per sweep point.
    States(Vec<DensityMatrix3>),
}

impl Payload {
    pub fn len(&self) -> usize {
        match self {
            Payload::Traces(t) => t.len(),
            Payload::QuadratureMap { q, .. } => q.len(),
            Payload::Populations(p) => p.len(),
            Payload::States(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitParam {
    pub name: String,
    pub value: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub kind: ExperimentKind,
    pub sweep_axis: SweepAxis,
    pub payload: Payload,
    pub fit_params: Vec<FitParam>,
    /// Labels of the sweep points, when they are not plain numbers.
    pub point_labels: Vec<String>,
}

impl ExperimentResult {
    fn new(kind: ExperimentKind, label: &str, values: Vec<f64>, payload: Payload) -> Self {
        debug_assert_eq!(values.len(), payload.len());
        Self {
            kind,
            sweep_axis: SweepAxis {
                label: label.to_string(),
                values,
            },
            payload,
            fit_params: Vec::new(),
            point_labels: Vec::new(),
        }
    }

    fn push(&mut self, name: &str, value: f64, error: f64) {
        self.fit_params.push(FitParam {
            name: name.to_string(),
            value,
            error,
        });
    }

    pub fn param(&self, name: &str) -> Option<f64> {
        self.fit_params.iter().find(|p| p.name == name).map(|p| p.value)
    }

    pub fn param_error(&self, name: &str) -> Option<f64> {
        self.fit_params.iter().find(|p| p.name == name).map(|p| p.error)
    }

    pub fn check(&self) -> Result<()> {
        if self.sweep_axis.values.len() != self.payload.len() {
            return Err(invalid(
                "payload",
                format!(
                    "{} points for a sweep of {}",
                    self.payload.len(),
                    self.sweep_axis.values.len()
                ),
            ));
        }
        Ok(())
    }
}

/// Prepares |n⟩ with dissipation and returns its populations.
pub fn prepare_basis(ctx: &Context, n: usize) -> Result<[f64; 3]> {
    let mut psi = Vec3::zeros();
    psi[n] = c(1.0, 0.0);
    let prep = prepare_state(&ctx.params, &psi, &ctx.shape, true)?;
    Ok(prep.achieved.populations())
}

fn readout_residuals(
    ctx: &Context,
    shifts: [f64; 3],
    inits: &[[f64; 3]; 3],
    data: &[ReadoutTrace],
) -> Result<Vec<f64>> {
    let spectrum = ctx.spectrum.clone().with_shifts(shifts);
    let model: Vec<ReadoutTrace> = inits
        .par_iter()
        .map(|p| simulate_readout(&ctx.params, &spectrum, &ctx.readout, *p))
        .collect::<Result<_>>()?;
    Ok(model
        .iter()
        .zip(data)
        .flat_map(|(m, d)| {
            let i = m.i_quad.iter().zip(&d.i_quad).map(|(a, b)| a - b);
            let q = m.q_quad.iter().zip(&d.q_quad).map(|(a, b)| a - b);
            i.chain(q).collect::<Vec<_>>()
        })
        .collect())
}

/// Traces for the three prepared basis states and the cavity pulls fitted
/// to them with the Cavity-Bloch model. The fit starts from a per-level
/// scan seeded with the Duffing-model pulls, not from the configured ones.
pub fn run_readout_basis(ctx: &Context) -> Result<ExperimentResult> {
    let inits: [[f64; 3]; 3] = [prepare_basis(ctx, 0)?, prepare_basis(ctx, 1)?, prepare_basis(ctx, 2)?];
    let traces: Vec<ReadoutTrace> = inits.par_iter().map(|p| ctx.readout(*p)).collect::<Result<_>>()?;

    let mut start = dispersive_spectrum(&ctx.params)?.shifts();
    let cost = |s: [f64; 3]| -> f64 {
        readout_residuals(ctx, s, &inits, &traces)
            .map(|r| r.iter().map(|v| v * v).sum())
            .unwrap_or(f64::INFINITY)
    };
    for n in 0..3 {
        let grid: Vec<f64> = (0..=88).map(|k| -2.0 + 0.25 * k as f64).collect();
        let best = grid
            .par_iter()
            .map(|&v| {
                let mut s = start;
                s[n] = v;
                (cost(s), v)
            })
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .expect("nonempty grid");
        start[n] = best.1;
    }
    let fit = fit::least_squares(
        |p| readout_residuals(ctx, [p[0], p[1], p[2]], &inits, &traces).unwrap_or_else(|_| vec![f64::INFINITY]),
        &start,
        &[0.1, 0.1, 0.1],
    )?;

    let mut res = ExperimentResult::new(
        ExperimentKind::ReadoutBasis,
        "level",
        vec![0.0, 1.0, 2.0],
        Payload::Traces(traces),
    );
    for n in 0..3 {
        res.push(&format!("s{n}_MHz"), fit.params[n], fit.errors[n]);
    }
    res.check()?;
    Ok(res)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecayMapOptions {
    /// Gaussian noise added to Q, relative to the largest |Q| in the map.
    pub noise_rel: f64,
    pub fit: bool,
    /// Starting guess of the fit, (T₁¹, T₁²) in ns.
    #[serde(rename = "fit_start_ns")]
    pub fit_start: [f64; 2],
}

impl Default for DecayMapOptions {
    fn default() -> Self {
        Self {
            noise_rel: 0.01,
            fit: true,
            fit_start: [500.0, 500.0],
        }
    }
}

fn q_map(params: &DeviceParams, ctx: &Context, p_init: [f64; 3], detunings: &[f64]) -> Result<Vec<Vec<f64>>> {
    detunings
        .par_iter()
        .map(|&delta_rm| {
            let s = ReadoutSettings {
                delta_rm,
                ..ctx.readout.clone()
            };
            simulate_readout(params, &ctx.spectrum, &s, p_init).map(|t| t.q_quad)
        })
        .collect()
}

/// Q(t, Δ_rm) after preparing |2⟩, and T₁¹, T₁² fitted to it with the
/// prepared populations held fixed.
pub fn run_decay_map(ctx: &Context, detunings: &[f64], opts: &DecayMapOptions, seed: u64) -> Result<ExperimentResult> {
    if detunings.is_empty() {
        return Err(invalid("detunings", "empty grid"));
    }
    for &d in detunings {
        ReadoutSettings {
            delta_rm: d,
            ..ctx.readout.clone()
        }
        .validate_against(&ctx.params, &ctx.spectrum)?;
    }
    let p_init = prepare_basis(ctx, 2)?;
    let mut q = q_map(&ctx.params, ctx, p_init, detunings)?;
    let scale = q.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
    if opts.noise_rel > 0.0 {
        let normal = Normal::new(0.0, opts.noise_rel * scale).map_err(|e| invalid("noise_rel", e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for row in &mut q {
            for v in row.iter_mut() {
                *v += normal.sample(&mut rng);
            }
        }
    }
    let times: Vec<f64> = (0..ctx.readout.n_samples())
        .map(|k| ctx.readout.t_start + k as f64 * ctx.readout.dt)
        .collect();

    let mut res = ExperimentResult::new(
        ExperimentKind::DecayMap,
        "delta_rm_MHz",
        detunings.to_vec(),
        Payload::QuadratureMap { times, q: q.clone() },
    );
    if opts.fit {
        let data: Vec<f64> = q.into_iter().flatten().collect();
        let residuals = |x: &[f64]| -> Vec<f64> {
            let trial = DeviceParams {
                t1: vec![x[0].exp(), x[1].exp()],
                ..ctx.params.clone()
            };
            match q_map(&trial, ctx, p_init, detunings) {
                Ok(m) => m.into_iter().flatten().zip(&data).map(|(a, b)| a - b).collect(),
                Err(_) => vec![f64::INFINITY; data.len()],
            }
        };
        let x0 = [opts.fit_start[0].ln(), opts.fit_start[1].ln()];
        let fit = fit::least_squares(residuals, &x0, &[0.2, 0.2])?;
        for (k, name) in ["t1_1_ns", "t1_2_ns"].iter().enumerate() {
            let t = fit.params[k].exp();
            res.push(name, t, t * fit.errors[k]);
        }
    }
    res.check()?;
    Ok(res)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RabiOptions {
    /// Smallest accepted peak-to-peak oscillation of the driven population.
    pub min_contrast: f64,
}

impl Default for RabiOptions {
    fn default() -> Self {
        Self { min_contrast: 0.2 }
    }
}

/// Peak amplitude the pulse calibration uses for a π rotation.
pub fn calibrated_pi_amplitude(ctx: &Context, transition: Transition) -> Result<f64> {
    Ok(DragWaveform::new(&ctx.params, &ctx.pulse(transition, PI, 0.0)?)?.peak())
}

/// 41 amplitudes from 0 to 1.5 times the calibrated π amplitude. Wider
/// sweeps reach drives where leakage and Stark shifts bend the curve away
/// from a sinusoid and bias the fitted rate.
pub fn default_rabi_amplitudes(ctx: &Context, transition: Transition) -> Result<Vec<f64>> {
    let top = 1.5 * calibrated_pi_amplitude(ctx, transition)?;
    Ok((0..=40).map(|k| top * k as f64 / 40.0).collect())
}

/// Fixed-shape pulses of varying peak amplitude. 01 drives start in |0⟩, 12
/// drives start after a calibrated 01 π pulse. Populations come from OLS on
/// the simulated traces; a sinusoid fit gives the Rabi rate and π amplitude.
pub fn run_rabi(
    ctx: &Context,
    transition: Transition,
    amplitudes: &[f64],
    opts: &RabiOptions,
) -> Result<ExperimentResult> {
    if amplitudes.len() < 5 {
        return Err(invalid("amplitudes", "need at least five points"));
    }
    let refs = ctx.references()?;
    let pre: Vec<PulseSegment> = match transition {
        Transition::T01 => vec![],
        Transition::T12 => vec![ctx.pulse(Transition::T01, PI, 0.0)?],
    };
    let pops: Vec<[f64; 3]> = amplitudes
        .par_iter()
        .map(|&a| {
            let mut seq = pre.clone();
            seq.push(PulseSegment::new(transition, PI, &ctx.shape).with_peak_amplitude(a));
            let rho = ctx.run_sequence(&seq)?;
            let tr = ctx.readout(rho.populations())?;
            ols_populations(&tr, &refs, false).map(|e| e.p)
        })
        .collect::<Result<_>>()?;
    let upper = transition.lower() + 1;
    let y: Vec<f64> = pops.iter().map(|p| p[upper]).collect();
    let fit = fit::fit_rabi(amplitudes, &y)?;
    let contrast = 2.0 * fit.params[0].abs();
    if contrast < opts.min_contrast {
        return Err(Error::Fit(format!(
            "Rabi contrast {contrast:.3} below threshold {}",
            opts.min_contrast
        )));
    }
    let k = fit.params[1].abs();
    let mut res = ExperimentResult::new(
        ExperimentKind::Rabi,
        "peak_amplitude_MHz",
        amplitudes.to_vec(),
        Payload::Populations(pops),
    );
    res.push("rabi_rate_rad_per_MHz", k, fit.errors[1]);
    res.push("pi_amplitude_MHz", PI / k, PI / (k * k) * fit.errors[1]);
    res.push(
        "calibrated_pi_amplitude_MHz",
        calibrated_pi_amplitude(ctx, transition)?,
        0.0,
    );
    res.push("contrast", contrast, 2.0 * fit.errors[0]);
    res.check()?;
    Ok(res)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RamseyOptions {
    /// Detuning of the 12 drive, MHz.
    #[serde(rename = "detuning_MHz")]
    pub detuning: f64,
    /// Wait between the 01 π pulse and the first 12 π/2 pulse, ns.
    #[serde(rename = "lead_delay_ns")]
    pub lead_delay: f64,
}

impl Default for RamseyOptions {
    fn default() -> Self {
        Self {
            detuning: 5.0,
            lead_delay: 0.0,
        }
    }
}

/// π⁰¹, (π/2)¹², wait τ, (π/2)¹² with the 12 drive detuned.
/// Carriers run on the absolute clock, so the second pulse's phase advances
/// by 2π·detuning·τ relative to the first. Fits p₂ − p₁ to a damped cosine.
pub fn run_ramsey12(ctx: &Context, opts: &RamseyOptions, delays: &[f64]) -> Result<ExperimentResult> {
    if delays.iter().any(|d| !(*d >= 0.0)) {
        return Err(invalid("delays", "must be non-negative"));
    }
    if !(opts.lead_delay >= 0.0) {
        return Err(invalid("lead_delay_ns", "must be non-negative"));
    }
    if !opts.detuning.is_finite() {
        return Err(invalid("detuning_MHz", "must be finite"));
    }
    let refs = ctx.references()?;
    let pi01 = ctx.pulse(Transition::T01, PI, 0.0)?;
    let half = ctx.pulse(Transition::T12, FRAC_PI_2, 0.0)?.with_detuning(opts.detuning);
    let first = half.clone().with_delay(opts.lead_delay);
    let pops: Vec<[f64; 3]> = delays
        .par_iter()
        .map(|&tau| {
            let seq = [pi01.clone(), first.clone(), half.clone().with_delay(tau)];
            let rho = ctx.run_sequence(&seq)?;
            let tr = ctx.readout(rho.populations())?;
            ols_populations(&tr, &refs, true).map(|e| e.p)
        })
        .collect::<Result<_>>()?;
    let y: Vec<f64> = pops.iter().map(|p| p[2] - p[1]).collect();
    let fit = fit::fit_damped_cosine(delays, &y)?;
    let mut res = ExperimentResult::new(
        ExperimentKind::Ramsey12,
        "delay_ns",
        delays.to_vec(),
        Payload::Populations(pops),
    );
    push_damped(&mut res, &fit);
    res.check()?;
    Ok(res)
}

fn push_damped(res: &mut ExperimentResult, fit: &FitResult) {
    res.push("amplitude", fit.params[0], fit.errors[0]);
    res.push("decay_ns", fit.params[1], fit.errors[1]);
    res.push("frequency_MHz", 1e3 * fit.params[2].abs(), 1e3 * fit.errors[2]);
    res.push("phase_rad", fit.params[3], fit.errors[3]);
    res.push("offset", fit.params[4], fit.errors[4]);
}

/// Additive Gaussian noise on the nine integrated signals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseModel {
    /// σ relative to the spread max(m) − min(m) of the measurement operator.
    pub sigma_rel: f64,
    /// Bootstrap resamples for error bars; 0 skips the bootstrap.
    pub bootstrap: usize,
}

/// Gives density-matrix element spreads near 0.02 with the default readout.
pub const DEFAULT_SIGMA_REL: f64 = 0.02;

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            sigma_rel: DEFAULT_SIGMA_REL,
            bootstrap: 200,
        }
    }
}

impl NoiseModel {
    pub fn noiseless() -> Self {
        Self {
            sigma_rel: 0.0,
            bootstrap: 0,
        }
    }
}

/// Calibrated pulses for the nine pre-rotations, shared across states.
#[derive(Debug, Clone)]
pub struct TomographyPulses {
    sequences: Vec<Vec<PulseSegment>>,
}

impl TomographyPulses {
    pub fn new(ctx: &Context) -> Result<Self> {
        let sequences = tomography_sequences()
            .iter()
            .map(|seq| {
                seq.iter()
                    .map(|&(tr, angle, axis)| ctx.pulse(tr, angle, axis))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        Ok(Self { sequences })
    }
}

/// Shared inputs of a tomography run.
pub struct TomographySetup {
    pub ops: MeasurementOperator,
    pub pulses: TomographyPulses,
}

impl TomographySetup {
    pub fn new(ctx: &Context) -> Result<Self> {
        Ok(Self {
            ops: ctx.measurement_operator()?,
            pulses: TomographyPulses::new(ctx)?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct TomographyOutcome {
    pub target: StateVector,
    pub prepared: DensityMatrix3,
    pub record: TomographyRecord,
    pub estimate: DensityMatrix3,
    pub fidelity: f64,
    /// Bootstrap spread of the fidelity; 0 without bootstrap.
    pub fidelity_error: f64,
    /// Mean bootstrap spread of the density-matrix coordinates.
    pub element_spread: Option<f64>,
    /// Fidelity of the prepared state before any tomography pulse.
    pub preparation_fidelity: f64,
    pub mle_cost: f64,
}

/// Prepare, rotate, read out, integrate, add noise, reconstruct.
pub fn tomography_once(
    ctx: &Context,
    setup: &TomographySetup,
    target: &StateVector,
    noise: &NoiseModel,
    seed: u64,
) -> Result<TomographyOutcome> {
    let target = normalized(*target)?;
    let prep = prepare_state(&ctx.params, &target, &ctx.shape, true)?;
    let rotations = tomography_rotations();
    let clean: Vec<f64> = setup
        .pulses
        .sequences
        .par_iter()
        .map(|rot| {
            let mut seq = prep.sequence.clone();
            seq.extend(rot.iter().cloned());
            let rho = ctx.run_sequence(&seq)?;
            let tr = ctx.readout(rho.populations())?;
            integrate_in_phase(&tr, setup.ops.window)
        })
        .collect::<Result<_>>()?;
    let spread = setup.ops.m_values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - setup.ops.m_values.iter().cloned().fold(f64::INFINITY, f64::min);
    let sigma = noise.sigma_rel * spread;
    let mut values: [f64; 9] = clean.try_into().expect("nine rotations");
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).map_err(|e| invalid("sigma_rel", e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in &mut values {
            *v += normal.sample(&mut rng);
        }
    }
    // Noiseless records still need a finite weight per point.
    let weight_sigma = if sigma > 0.0 { sigma } else { 1e-6 * spread };
    let record = TomographyRecord::new(values, [weight_sigma; 9])?;
    let opts = MleOptions::default();
    let est = reconstruct(&record, &setup.ops, &rotations, &opts)?;
    let f = fidelity(&target, &est.rho)?;
    let (fidelity_error, element_spread) = if noise.bootstrap >= 2 && sigma > 0.0 {
        let b = bootstrap(
            &record,
            &setup.ops,
            &rotations,
            noise.bootstrap,
            seed ^ 0x9e37_79b9_7f4a_7c15,
            &opts,
        )?;
        let fs: Vec<f64> = b.states.iter().map(|s| fidelity(&target, s)).collect::<Result<_>>()?;
        let n = fs.len() as f64;
        let mean = fs.iter().sum::<f64>() / n;
        let sd = (fs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        (sd, Some(b.typical()))
    } else {
        (0.0, None)
    };
    Ok(TomographyOutcome {
        target,
        preparation_fidelity: fidelity(&target, &prep.achieved)?,
        prepared: prep.achieved,
        record,
        estimate: est.rho,
        fidelity: f,
        fidelity_error,
        element_spread,
        mle_cost: est.cost,
    })
}

/// Single-state tomography as an experiment result.
pub fn run_tomography(ctx: &Context, target: &StateVector, noise: &NoiseModel, seed: u64) -> Result<ExperimentResult> {
    let setup = TomographySetup::new(ctx)?;
    let out = tomography_once(ctx, &setup, target, noise, seed)?;
    let mut res = ExperimentResult::new(
        ExperimentKind::Tomography,
        "state",
        vec![0.0],
        Payload::States(vec![out.estimate]),
    );
    res.push("fidelity", out.fidelity, out.fidelity_error);
    res.push("preparation_fidelity", out.preparation_fidelity, 0.0);
    res.push("mle_cost", out.mle_cost, 0.0);
    if let Some(s) = out.element_spread {
        res.push("element_spread", s, 0.0);
    }
    res.check()?;
    Ok(res)
}

/// A named pure target state.
#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    pub name: String,
    pub state: StateVector,
}

impl Target {
    pub fn new(name: &str, amplitudes: [(f64, f64); 3]) -> Result<Self> {
        let v = Vec3::new(
            c(amplitudes[0].0, amplitudes[0].1),
            c(amplitudes[1].0, amplitudes[1].1),
            c(amplitudes[2].0, amplitudes[2].1),
        );
        Ok(Self {
            name: name.to_string(),
            state: normalized(v)?,
        })
    }
}

/// The two states shown with reconstructed density matrices.
pub fn psi_a() -> StateVector {
    Vec3::new(c(0.0, 0.0), c(FRAC_1_SQRT_2, 0.0), c(-FRAC_1_SQRT_2, 0.0))
}

pub fn psi_b() -> StateVector {
    let s = 1.0 / 3f64.sqrt();
    Vec3::new(c(s, 0.0), c(0.0, s), c(-s, 0.0))
}

/// Fourteen targets: the basis states, the x- and y-phased equal
/// superpositions of each level pair, ψ_a, ψ_b, and three equal
/// three-level superpositions with phases 0, 2π/3·k·n.
pub fn default_targets() -> Vec<Target> {
    let w = 2.0 * PI / 3.0;
    let mut t = vec![
        Target::new("0", [(1.0, 0.0), (0.0, 0.0), (0.0, 0.0)]),
        Target::new("1", [(0.0, 0.0), (1.0, 0.0), (0.0, 0.0)]),
        Target::new("2", [(0.0, 0.0), (0.0, 0.0), (1.0, 0.0)]),
        Target::new("x01", [(1.0, 0.0), (1.0, 0.0), (0.0, 0.0)]),
        Target::new("y01", [(1.0, 0.0), (0.0, 1.0), (0.0, 0.0)]),
        Target::new("x12", [(0.0, 0.0), (1.0, 0.0), (1.0, 0.0)]),
        Target::new("y12", [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)]),
        Target::new("x02", [(1.0, 0.0), (0.0, 0.0), (1.0, 0.0)]),
        Target::new("y02", [(1.0, 0.0), (0.0, 0.0), (0.0, 1.0)]),
    ]
    .into_iter()
    .map(|r| r.expect("nonzero amplitudes"))
    .collect::<Vec<_>>();
    t.push(Target {
        name: "psi_a".into(),
        state: psi_a(),
    });
    t.push(Target {
        name: "psi_b".into(),
        state: psi_b(),
    });
    for k in 0..3 {
        let ph = |n: usize| ((w * (k * n) as f64).cos(), (w * (k * n) as f64).sin());
        t.push(Target::new(&format!("equal{k}"), [ph(0), ph(1), ph(2)]).expect("nonzero amplitudes"));
    }
    t
}

/// Looks up a default target by name.
pub fn target_by_name(name: &str) -> Result<Target> {
    default_targets()
        .into_iter()
        .find(|t| t.name == name)
        .ok_or_else(|| invalid("target", format!("unknown target `{name}`")))
}

/// Tomography of every target; target i draws its noise from seed + i.
pub fn run_fidelity_batch(
    ctx: &Context,
    targets: &[Target],
    noise: &NoiseModel,
    seed: u64,
) -> Result<ExperimentResult> {
    if targets.is_empty() {
        return Err(invalid("targets", "empty target list"));
    }
    let setup = TomographySetup::new(ctx)?;
    let outcomes: Vec<TomographyOutcome> = targets
        .par_iter()
        .enumerate()
        .map(|(i, t)| tomography_once(ctx, &setup, &t.state, noise, seed.wrapping_add(i as u64)))
        .collect::<Result<_>>()?;
    let n = outcomes.len() as f64;
    let mean = outcomes.iter().map(|o| o.fidelity).sum::<f64>() / n;
    let mut res = ExperimentResult::new(
        ExperimentKind::FidelityBatch,
        "target_index",
        (0..outcomes.len()).map(|i| i as f64).collect(),
        Payload::States(outcomes.iter().map(|o| o.estimate.clone()).collect()),
    );
    res.point_labels = targets.iter().map(|t| t.name.clone()).collect();
    for (t, o) in targets.iter().zip(&outcomes) {
        res.push(&format!("fidelity_{}", t.name), o.fidelity, o.fidelity_error);
    }
    let sd = (outcomes.iter().map(|o| (o.fidelity - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    res.push("mean_fidelity", mean, sd / n.sqrt());
    let min = outcomes.iter().map(|o| o.fidelity).fold(f64::INFINITY, f64::min);
    res.push("min_fidelity", min, 0.0);
    res.check()?;
    Ok(res)
}

/// Detuning of the largest time-averaged |Q| in [t_from, t_to], refined by
/// a parabola through the best grid point and its neighbours.
pub fn peak_detuning(times: &[f64], detunings: &[f64], q: &[Vec<f64>], t_from: f64, t_to: f64) -> Result<f64> {
    let idx: Vec<usize> = (0..times.len())
        .filter(|&k| times[k] >= t_from && times[k] <= t_to)
        .collect();
    if idx.is_empty() {
        return Err(invalid("window", format!("no samples in [{t_from}, {t_to}] ns")));
    }
    let mean: Vec<f64> = q
        .iter()
        .map(|row| idx.iter().map(|&k| row[k].abs()).sum::<f64>() / idx.len() as f64)
        .collect();
    let (best, _) = mean
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .ok_or_else(|| invalid("detunings", "empty grid"))?;
    if best == 0 || best + 1 == mean.len() {
        return Ok(detunings[best]);
    }
    let (x0, x1, x2) = (detunings[best - 1], detunings[best], detunings[best + 1]);
    let (y0, y1, y2) = (mean[best - 1], mean[best], mean[best + 1]);
    let denom = (x0 - x1) * (x0 - x2) * (x1 - x2);
    let a = (x2 * (y1 - y0) + x1 * (y0 - y2) + x0 * (y2 - y1)) / denom;
    let b = (x2 * x2 * (y0 - y1) + x1 * x1 * (y2 - y0) + x0 * x0 * (y1 - y2)) / denom;
    if a >= 0.0 {
        return Ok(x1);
    }
    Ok((-b / (2.0 * a)).clamp(x0, x2))
}
