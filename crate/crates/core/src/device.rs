//! Static spectrum of a transmon dispersively coupled to a resonator.
//!
//! All frequencies are ordinary frequencies in MHz (the `/2π` values), all
//! times are in ns. Conversion to angular units happens inside the
//! integrators via [`angular`].

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Minimum |Δₙ|/gₙ for a transition to count as dispersive.
pub const DISPERSIVE_THRESHOLD: f64 = 5.0;

/// MHz → rad/ns.
#[inline]
pub fn angular(f_mhz: f64) -> f64 {
    2.0 * std::f64::consts::PI * 1e-3 * f_mhz
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceParams {
    #[serde(rename = "charging_energy_MHz")]
    pub charging_energy: f64,
    #[serde(rename = "omega_r_MHz")]
    pub omega_r: f64,
    #[serde(rename = "omega_01_MHz")]
    pub omega_01: f64,
    #[serde(rename = "g0_MHz")]
    pub g0: f64,
    /// Coupling ratios ηₙ = gₙ/g₀ for n = 0..n_levels; η₀ must be 1.
    pub eta: Vec<f64>,
    /// α = ω₁₂ − ω₀₁; `None` means −E_c.
    #[serde(rename = "anharmonicity_MHz", default, skip_serializing_if = "Option::is_none")]
    pub anharmonicity: Option<f64>,
    #[serde(rename = "kappa_MHz")]
    pub kappa: f64,
    /// Energy relaxation time of levels 1..n_levels.
    #[serde(rename = "t1_ns")]
    pub t1: Vec<f64>,
    /// Coherence time of the (n−1, n) transition for levels 1..n_levels.
    #[serde(rename = "t2_ns")]
    pub t2: Vec<f64>,
    /// Carried as metadata; no computation uses it.
    #[serde(rename = "ej_max_MHz", default, skip_serializing_if = "Option::is_none")]
    pub ej_max: Option<f64>,
    pub n_levels: usize,
}

impl Default for DeviceParams {
    fn default() -> Self {
        Self::reference()
    }
}

impl DeviceParams {
    /// Reference device: the bias point the defaults are tuned for.
    pub fn reference() -> Self {
        Self {
            charging_energy: 298.0,
            omega_r: 6942.1,
            omega_01: 6942.1 - 1319.0,
            g0: 115.0,
            eta: vec![1.0, 1.43, 3f64.sqrt()],
            anharmonicity: None,
            kappa: 1.0,
            t1: vec![800.0, 700.0],
            t2: vec![1600.0, 500.0],
            ej_max: Some(38_000.0),
            n_levels: 3,
        }
    }

    /// The same device with relaxation and dephasing switched off.
    pub fn without_decoherence(&self) -> Self {
        Self {
            t1: vec![f64::INFINITY; self.t1.len()],
            t2: vec![f64::INFINITY; self.t2.len()],
            ..self.clone()
        }
    }

    pub fn anharmonicity(&self) -> f64 {
        self.anharmonicity.unwrap_or(-self.charging_energy)
    }

    /// Coupling ratio on the 1↔2 transition, λ₁ = η₁.
    pub fn eta1(&self) -> f64 {
        self.eta.get(1).copied().unwrap_or(2f64.sqrt())
    }

    /// Checks every invariant except the dispersive-regime bound, which
    /// [`dispersive_spectrum`] enforces.
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &'static str, v: f64| {
            if v > 0.0 && !v.is_nan() {
                Ok(())
            } else {
                Err(invalid(name, format!("must be positive, got {v}")))
            }
        };
        positive("charging_energy_MHz", self.charging_energy)?;
        positive("g0_MHz", self.g0)?;
        positive("kappa_MHz", self.kappa)?;
        if !self.omega_r.is_finite() || !self.omega_01.is_finite() {
            return Err(invalid("omega_MHz", "frequencies must be finite"));
        }
        if self.n_levels != 3 {
            return Err(invalid(
                "n_levels",
                format!("only 3 levels are supported, got {}", self.n_levels),
            ));
        }
        if self.eta.len() != self.n_levels {
            return Err(invalid(
                "eta",
                format!("expected {} ratios, got {}", self.n_levels, self.eta.len()),
            ));
        }
        if self.eta[0] != 1.0 {
            return Err(invalid("eta", format!("eta[0] must be exactly 1, got {}", self.eta[0])));
        }
        for &e in &self.eta {
            positive("eta", e)?;
        }
        if self.t1.len() != self.n_levels - 1 || self.t2.len() != self.n_levels - 1 {
            return Err(invalid("t1_ns/t2_ns", "one entry per excited level is required"));
        }
        for &t in &self.t1 {
            positive("t1_ns", t)?;
        }
        for &t in &self.t2 {
            positive("t2_ns", t)?;
        }
        if let Some(a) = self.anharmonicity {
            if !a.is_finite() {
                return Err(invalid("anharmonicity_MHz", "must be finite"));
            }
        }
        Ok(())
    }

    /// Relaxation rates γₙ = 1/T₁ⁿ in 1/ns, indexed by level (γ₀ = 0).
    pub fn relaxation_rates(&self) -> [f64; 3] {
        [0.0, 1.0 / self.t1[0], 1.0 / self.t1[1]]
    }

    /// Pure dephasing rates Γφ,ₙ (1/ns) of the per-level dephasing channels.
    ///
    /// T₂ⁿ is the coherence time of the (n−1, n) pair, so
    /// Γφ,₁ = 1/T₂¹ − γ₁/2 and Γφ,₂ = 1/T₂² − (γ₁ + γ₂)/2 − Γφ,₁.
    pub fn dephasing_rates(&self) -> Result<[f64; 3]> {
        let [_, g1, g2] = self.relaxation_rates();
        let d1 = 1.0 / self.t2[0] - 0.5 * g1;
        let d2 = 1.0 / self.t2[1] - 0.5 * (g1 + g2) - d1;
        const SLACK: f64 = 1e-15;
        if d1 < -SLACK {
            return Err(Error::NegativeDephasing { level: 1, rate: d1 });
        }
        if d2 < -SLACK {
            return Err(Error::NegativeDephasing { level: 2, rate: d2 });
        }
        Ok([0.0, d1.max(0.0), d2.max(0.0)])
    }
}

/// Duffing closure ωₙ = n·ω₀₁ + n(n−1)/2·α for n = 0..=n_levels.
///
/// One level above the qutrit is included because the shift of the top
/// qutrit level depends on the detuning of its upward transition.
pub fn level_frequencies(params: &DeviceParams) -> Result<Vec<f64>> {
    params.validate()?;
    let alpha = params.anharmonicity();
    Ok((0..=params.n_levels)
        .map(|n| {
            let n = n as f64;
            n * params.omega_01 + 0.5 * n * (n - 1.0) * alpha
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispersiveSpectrum {
    /// ω₀..ω_M, MHz.
    pub omega_n: Vec<f64>,
    /// Δₙ = ω_{n,n+1} − ω_r, MHz.
    pub delta_n: Vec<f64>,
    /// gₙ = ηₙ·g₀, MHz.
    pub g_n: Vec<f64>,
    /// χₙ = gₙ²/Δₙ, MHz.
    pub chi_n: Vec<f64>,
    /// Cavity pull sₙ for the atom in level n, MHz.
    pub s_n: Vec<f64>,
    pub n_crit: f64,
}

impl DispersiveSpectrum {
    /// Replaces the computed cavity pulls with externally measured ones.
    pub fn with_shifts(mut self, shifts: [f64; 3]) -> Self {
        self.s_n = shifts.to_vec();
        self
    }

    pub fn shifts(&self) -> [f64; 3] {
        [self.s_n[0], self.s_n[1], self.s_n[2]]
    }
}

pub fn dispersive_spectrum(params: &DeviceParams) -> Result<DispersiveSpectrum> {
    let omega_n = level_frequencies(params)?;
    let m = params.n_levels;
    let mut delta_n = Vec::with_capacity(m);
    let mut g_n = Vec::with_capacity(m);
    let mut chi_n = Vec::with_capacity(m);
    for n in 0..m {
        let delta = omega_n[n + 1] - omega_n[n] - params.omega_r;
        let g = params.eta[n] * params.g0;
        if delta == 0.0 {
            return Err(Error::NotDispersive {
                transition: n,
                ratio: 0.0,
                threshold: DISPERSIVE_THRESHOLD,
            });
        }
        let ratio = delta.abs() / g;
        if ratio < DISPERSIVE_THRESHOLD {
            return Err(Error::NotDispersive {
                transition: n,
                ratio,
                threshold: DISPERSIVE_THRESHOLD,
            });
        }
        delta_n.push(delta);
        g_n.push(g);
        chi_n.push(g * g / delta);
    }
    let s_n = (0..m)
        .map(|n| if n == 0 { -chi_n[0] } else { -(chi_n[n] - chi_n[n - 1]) })
        .collect();
    let n_crit = delta_n[0] * delta_n[0] / (4.0 * params.g0 * params.g0);
    Ok(DispersiveSpectrum {
        omega_n,
        delta_n,
        g_n,
        chi_n,
        s_n,
        n_crit,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShiftRow {
    pub omega_01: f64,
    pub s: [f64; 3],
}

/// Evaluates the cavity pulls along a grid of qubit frequencies. Grid points
/// outside the dispersive regime are collected and reported together.
pub fn shift_vs_qubit_frequency(params: &DeviceParams, omega_01_grid: &[f64]) -> Result<Vec<ShiftRow>> {
    params.validate()?;
    let mut rows = Vec::with_capacity(omega_01_grid.len());
    let mut rejected = Vec::new();
    for &omega_01 in omega_01_grid {
        let point = DeviceParams {
            omega_01,
            ..params.clone()
        };
        match dispersive_spectrum(&point) {
            Ok(spec) => rows.push(ShiftRow {
                omega_01,
                s: spec.shifts(),
            }),
            Err(Error::NotDispersive { .. }) => rejected.push(omega_01),
            Err(e) => return Err(e),
        }
    }
    if rejected.is_empty() {
        Ok(rows)
    } else {
        Err(Error::SweepRejected { points: rejected })
    }
}
