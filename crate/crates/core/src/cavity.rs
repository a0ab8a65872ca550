//! Three-level Cavity-Bloch equations for averaged dispersive readout.
//!
//! The cavity field is split into components Aₙ conditioned on the atom
//! being in level n and weighted by its population. In the frame rotating at
//! the measurement frequency
//!
//! ```text
//! dpₙ/dt = γₙ₊₁pₙ₊₁ − γₙpₙ
//! dAₙ/dt = [i(Δ_rm − sₙ) − κ/2]Aₙ − iε pₙ + γₙ₊₁Aₙ₊₁ − γₙAₙ
//! ```
//!
//! and the transmitted quadratures are I + iQ = g·ΣAₙ for a complex detection
//! gain g.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::device::{angular, DeviceParams, DispersiveSpectrum};
use crate::error::{invalid, Error, Result};
use crate::linalg::{c, C64, I};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReadoutSettings {
    /// Δ_rm = ω_r − ω_m.
    #[serde(rename = "delta_rm_MHz")]
    pub delta_rm: f64,
    /// Measurement drive amplitude ε_m.
    #[serde(rename = "drive_amp_MHz")]
    pub drive_amp: f64,
    #[serde(rename = "t_start_ns")]
    pub t_start: f64,
    #[serde(rename = "t_end_ns")]
    pub t_end: f64,
    /// Output sampling step.
    #[serde(rename = "dt_ns")]
    pub dt: f64,
    /// Upper bound on the internal RK4 step; the integrator also caps it
    /// from κ and the largest field detuning.
    #[serde(rename = "max_step_ns", default, skip_serializing_if = "Option::is_none")]
    pub max_step: Option<f64>,
    /// Complex detection gain (re, im).
    #[serde(default = "unit_gain")]
    pub gain: [f64; 2],
}

fn unit_gain() -> [f64; 2] {
    [1.0, 0.0]
}

impl Default for ReadoutSettings {
    fn default() -> Self {
        Self {
            delta_rm: 5.1,
            drive_amp: 0.5,
            t_start: 0.0,
            t_end: 2000.0,
            dt: 1.0,
            max_step: None,
            gain: unit_gain(),
        }
    }
}

impl ReadoutSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(invalid("dt_ns", format!("must be positive, got {}", self.dt)));
        }
        if !(self.t_end > self.t_start) {
            return Err(invalid("t_end_ns", "t_end must exceed t_start"));
        }
        if !self.delta_rm.is_finite() || !self.drive_amp.is_finite() {
            return Err(invalid("delta_rm_MHz/drive_amp_MHz", "must be finite"));
        }
        if let Some(h) = self.max_step {
            if !(h > 0.0) {
                return Err(invalid("max_step_ns", "must be positive"));
            }
        }
        Ok(())
    }

    /// Full validation including the photon-number bound against n_crit.
    pub fn validate_against(&self, params: &DeviceParams, spectrum: &DispersiveSpectrum) -> Result<()> {
        self.validate()?;
        let photons = (0..3)
            .map(|n| steady_state_field(params, spectrum, self, n).norm_sqr())
            .fold(0.0, f64::max);
        if photons >= spectrum.n_crit {
            return Err(Error::PhotonNumber {
                photons,
                n_crit: spectrum.n_crit,
            });
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        ((self.t_end - self.t_start) / self.dt).round() as usize + 1
    }

    fn gain(&self) -> C64 {
        c(self.gain[0], self.gain[1])
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReadoutTrace {
    pub times: Vec<f64>,
    pub i_quad: Vec<f64>,
    pub q_quad: Vec<f64>,
    pub populations: Vec<[f64; 3]>,
}

impl ReadoutTrace {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Weighted sum Σ wᵢ·traceᵢ of quadratures and populations on a shared grid.
    pub fn combine(traces: &[&ReadoutTrace], weights: &[f64]) -> ReadoutTrace {
        let n = traces[0].len();
        let mut out = ReadoutTrace {
            times: traces[0].times.clone(),
            i_quad: vec![0.0; n],
            q_quad: vec![0.0; n],
            populations: vec![[0.0; 3]; n],
        };
        for (tr, &w) in traces.iter().zip(weights) {
            for k in 0..n {
                out.i_quad[k] += w * tr.i_quad[k];
                out.q_quad[k] += w * tr.q_quad[k];
                for l in 0..3 {
                    out.populations[k][l] += w * tr.populations[k][l];
                }
            }
        }
        out
    }
}

/// Steady-state field αₙ = −iε / (κ/2 + i(sₙ − Δ_rm)) with the atom frozen in
/// level n. Dimensionless (√photons).
pub fn steady_state_field(
    params: &DeviceParams,
    spectrum: &DispersiveSpectrum,
    settings: &ReadoutSettings,
    n: usize,
) -> C64 {
    let eps = angular(settings.drive_amp);
    let kappa = angular(params.kappa);
    let detuning = angular(spectrum.s_n[n] - settings.delta_rm);
    -I * eps / c(0.5 * kappa, detuning)
}

/// Classic fixed-step RK4 over a flat real state vector.
pub(crate) fn rk4_step<const N: usize, F>(f: &F, t: f64, y: &[f64; N], h: f64) -> [f64; N]
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
{
    let add = |a: &[f64; N], b: &[f64; N], s: f64| -> [f64; N] { std::array::from_fn(|i| a[i] + s * b[i]) };
    let k1 = f(t, y);
    let k2 = f(t + 0.5 * h, &add(y, &k1, 0.5 * h));
    let k3 = f(t + 0.5 * h, &add(y, &k2, 0.5 * h));
    let k4 = f(t + h, &add(y, &k3, h));
    std::array::from_fn(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
}

/// Internal RK4 step for the given settings.
pub fn integration_step(params: &DeviceParams, spectrum: &DispersiveSpectrum, settings: &ReadoutSettings) -> f64 {
    let kappa = angular(params.kappa);
    let fastest = spectrum
        .s_n
        .iter()
        .map(|s| angular(s - settings.delta_rm).abs())
        .fold(0.5 * kappa, f64::max);
    let mut h = (0.1 / kappa).min(1.0).min(0.05 / fastest);
    if let Some(cap) = settings.max_step {
        h = h.min(cap);
    }
    let sub = (settings.dt / h).ceil().max(1.0);
    settings.dt / sub
}

/// Integrates the Cavity-Bloch equations from an empty cavity at `t_start`
/// with initial populations `p_init`.
pub fn simulate_readout(
    params: &DeviceParams,
    spectrum: &DispersiveSpectrum,
    settings: &ReadoutSettings,
    p_init: [f64; 3],
) -> Result<ReadoutTrace> {
    params.validate()?;
    settings.validate()?;
    let total: f64 = p_init.iter().sum();
    if (total - 1.0).abs() > 1e-9 || p_init.iter().any(|&p| !(-1e-12..=1.0 + 1e-12).contains(&p)) {
        return Err(invalid("p_init", format!("not a probability vector: {p_init:?}")));
    }

    let gamma = params.relaxation_rates();
    let kappa = angular(params.kappa);
    let eps = angular(settings.drive_amp);
    let rot: [C64; 3] =
        std::array::from_fn(|n| c(-0.5 * kappa - gamma[n], angular(settings.delta_rm - spectrum.s_n[n])));

    // y = [p0, p1, p2, Re A0, Im A0, Re A1, Im A1, Re A2, Im A2]
    let rhs = |_t: f64, y: &[f64; 9]| -> [f64; 9] {
        let p = [y[0], y[1], y[2]];
        let a = [c(y[3], y[4]), c(y[5], y[6]), c(y[7], y[8])];
        let mut d = [0.0; 9];
        d[0] = gamma[1] * p[1];
        d[1] = gamma[2] * p[2] - gamma[1] * p[1];
        d[2] = -gamma[2] * p[2];
        for n in 0..3 {
            let feed = if n < 2 {
                gamma[n + 1] * a[n + 1]
            } else {
                C64::new(0.0, 0.0)
            };
            let da = rot[n] * a[n] - I * eps * p[n] + feed;
            d[3 + 2 * n] = da.re;
            d[4 + 2 * n] = da.im;
        }
        d
    };

    let h = integration_step(params, spectrum, settings);
    let sub = (settings.dt / h).round() as usize;
    let n_out = settings.n_samples();
    let bound = 1e6 * (2.0 * eps / kappa + 1.0);
    let gain = settings.gain();

    let mut trace = ReadoutTrace {
        times: Vec::with_capacity(n_out),
        i_quad: Vec::with_capacity(n_out),
        q_quad: Vec::with_capacity(n_out),
        populations: Vec::with_capacity(n_out),
    };
    let mut y = [p_init[0], p_init[1], p_init[2], 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    for k in 0..n_out {
        let t = settings.t_start + k as f64 * settings.dt;
        if k > 0 {
            let t0 = t - settings.dt;
            for j in 0..sub {
                y = rk4_step(&rhs, t0 + j as f64 * h, &y, h);
            }
        }
        let field = gain * c(y[3] + y[5] + y[7], y[4] + y[6] + y[8]);
        if !field.re.is_finite() || !field.im.is_finite() || field.norm() > bound {
            return Err(Error::Integration {
                time_ns: t,
                reason: format!("cavity field diverged (|A| = {})", field.norm()),
            });
        }
        trace.times.push(t);
        trace.i_quad.push(field.re);
        trace.q_quad.push(field.im);
        trace.populations.push([y[0], y[1], y[2]]);
    }
    Ok(trace)
}

/// Readout responses α̃₀, α̃₁, α̃₂ for the three basis-state preparations.
pub fn reference_traces(
    params: &DeviceParams,
    spectrum: &DispersiveSpectrum,
    settings: &ReadoutSettings,
) -> Result<[ReadoutTrace; 3]> {
    let basis = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let traces: Vec<ReadoutTrace> = basis
        .par_iter()
        .map(|p| simulate_readout(params, spectrum, settings, *p))
        .collect::<Result<_>>()?;
    let [a, b, c]: [ReadoutTrace; 3] = traces.try_into().expect("three traces");
    Ok([a, b, c])
}

/// One trace per measurement detuning, in grid order.
pub fn detuning_sweep(
    params: &DeviceParams,
    spectrum: &DispersiveSpectrum,
    settings: &ReadoutSettings,
    p_init: [f64; 3],
    detunings: &[f64],
) -> Result<Vec<ReadoutTrace>> {
    detunings
        .par_iter()
        .map(|&delta_rm| {
            let s = ReadoutSettings {
                delta_rm,
                ..settings.clone()
            };
            simulate_readout(params, spectrum, &s, p_init)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::dispersive_spectrum;

    fn setup() -> (DeviceParams, DispersiveSpectrum, ReadoutSettings) {
        let p = DeviceParams::reference();
        let s = dispersive_spectrum(&p).unwrap();
        (p, s, ReadoutSettings::default())
    }

    #[test]
    fn steady_state_limits() {
        let (p, s, mut r) = setup();
        r.drive_amp = 0.0;
        assert_eq!(steady_state_field(&p, &s, &r, 0).norm(), 0.0);

        r.drive_amp = 0.5;
        r.delta_rm = s.s_n[1];
        let a = steady_state_field(&p, &s, &r, 1);
        assert!(a.re.abs() < 1e-15);
        assert!((a.im + 2.0 * 0.5 / 1.0).abs() < 1e-12);
    }

    #[test]
    fn q_peaks_at_each_shift() {
        let (p, _, r) = setup();
        let s = dispersive_spectrum(&p).unwrap().with_shifts([10.0, 5.9, 3.4]);
        for n in 0..3 {
            let grid: Vec<f64> = (0..=2000).map(|k| -5.0 + 0.01 * k as f64).collect();
            let best = grid
                .iter()
                .copied()
                .max_by(|&a, &b| {
                    let qa = steady_state_field(
                        &p,
                        &s,
                        &ReadoutSettings {
                            delta_rm: a,
                            ..r.clone()
                        },
                        n,
                    )
                    .im
                    .abs();
                    let qb = steady_state_field(
                        &p,
                        &s,
                        &ReadoutSettings {
                            delta_rm: b,
                            ..r.clone()
                        },
                        n,
                    )
                    .im
                    .abs();
                    qa.total_cmp(&qb)
                })
                .unwrap();
            assert!((best - s.s_n[n]).abs() < 0.006, "level {n}: {best}");
        }
    }

    #[test]
    fn ground_state_is_stationary_and_rings_up() {
        let (p, s, mut r) = setup();
        r.t_end = 8000.0;
        let tr = simulate_readout(&p, &s, &r, [1.0, 0.0, 0.0]).unwrap();
        assert!(tr.populations.iter().all(|q| *q == [1.0, 0.0, 0.0]));
        let ss = steady_state_field(&p, &s, &r, 0);
        let last = tr.len() - 1;
        assert!((tr.i_quad[last] - ss.re).abs() < 1e-6 * ss.norm());
        assert!((tr.q_quad[last] - ss.im).abs() < 1e-6 * ss.norm());
    }

    #[test]
    fn cascade_matches_closed_form() {
        let (p, s, mut r) = setup();
        r.t_end = 3000.0;
        r.dt = 5.0;
        let tr = simulate_readout(&p, &s, &r, [0.0, 0.0, 1.0]).unwrap();
        let (g1, g2) = (1.0 / 800.0, 1.0 / 700.0);
        for (t, q) in tr.times.iter().zip(&tr.populations) {
            let p2 = (-g2 * t).exp();
            let p1 = g2 / (g1 - g2) * ((-g2 * t).exp() - (-g1 * t).exp());
            assert!((q[2] - p2).abs() < 1e-9);
            assert!((q[1] - p1).abs() < 1e-9);
            assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn undamped_fields_converge_to_weighted_steady_state() {
        let (p, s, mut r) = setup();
        let p = DeviceParams {
            t1: vec![f64::INFINITY; 2],
            t2: vec![f64::INFINITY; 2],
            ..p
        };
        let kappa = angular(p.kappa);
        r.t_end = 40.0 / kappa;
        r.dt = 1.0;
        let w = [0.3, 0.2, 0.5];
        let tr = simulate_readout(&p, &s, &r, w).unwrap();
        let expect: C64 = (0..3).map(|n| w[n] * steady_state_field(&p, &s, &r, n)).sum();
        let last = tr.len() - 1;
        let got = c(tr.i_quad[last], tr.q_quad[last]);
        assert!((got - expect).norm() < 1e-3 * expect.norm().max(0.1));
    }

    #[test]
    fn gain_rotates_quadratures() {
        let (p, s, mut r) = setup();
        let a = simulate_readout(&p, &s, &r, [0.0, 1.0, 0.0]).unwrap();
        r.gain = [0.0, 1.0];
        let b = simulate_readout(&p, &s, &r, [0.0, 1.0, 0.0]).unwrap();
        for k in 0..a.len() {
            assert!((b.i_quad[k] + a.q_quad[k]).abs() < 1e-15);
            assert!((b.q_quad[k] - a.i_quad[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_bad_settings() {
        let (p, s, r) = setup();
        let bad = ReadoutSettings { dt: 0.0, ..r.clone() };
        assert!(simulate_readout(&p, &s, &bad, [1.0, 0.0, 0.0]).is_err());
        let bad = ReadoutSettings {
            t_end: -1.0,
            ..r.clone()
        };
        assert!(bad.validate().is_err());
        let loud = ReadoutSettings {
            drive_amp: 10.0,
            delta_rm: s.s_n[0],
            ..r.clone()
        };
        assert!(matches!(loud.validate_against(&p, &s), Err(Error::PhotonNumber { .. })));
        assert!(r.validate_against(&p, &s).is_ok());
        assert!(simulate_readout(&p, &s, &r, [0.5, 0.0, 0.0]).is_err());
    }
}
