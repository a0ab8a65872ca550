//! Run configuration read from TOML. Every section is optional and falls
//! back to the reference device; unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cavity::ReadoutSettings;
use crate::device::DeviceParams;
use crate::error::{invalid, Result};
use crate::experiments::{default_targets, Context, DecayMapOptions, NoiseModel, RabiOptions, RamseyOptions, Target};
use crate::pulse::{PulseShape, Transition};
use crate::reconstruction::DEFAULT_WINDOW_NS;

/// Evenly spaced points from `start` to `stop`, both included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
}

impl Grid {
    pub fn new(start: f64, stop: f64, points: usize) -> Self {
        Self { start, stop, points }
    }

    pub fn values(&self) -> Result<Vec<f64>> {
        if !self.start.is_finite() || !self.stop.is_finite() {
            return Err(invalid("grid", "bounds must be finite"));
        }
        match self.points {
            0 => Err(invalid("grid", "needs at least one point")),
            1 => Ok(vec![self.start]),
            n => {
                let h = (self.stop - self.start) / (n - 1) as f64;
                Ok((0..n)
                    .map(|k| {
                        if k + 1 == n {
                            self.stop
                        } else {
                            self.start + h * k as f64
                        }
                    })
                    .collect())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumConfig {
    #[serde(rename = "omega01_MHz")]
    pub omega01: Grid,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        Self {
            omega01: Grid::new(4600.0, 5800.0, 61),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecayMapConfig {
    #[serde(rename = "delta_rm_MHz")]
    pub delta_rm: Grid,
    pub options: DecayMapOptions,
}

impl Default for DecayMapConfig {
    fn default() -> Self {
        Self {
            delta_rm: Grid::new(0.0, 13.0, 53),
            options: DecayMapOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TransitionName {
    #[serde(rename = "01")]
    T01,
    #[serde(rename = "12")]
    T12,
}

impl From<TransitionName> for Transition {
    fn from(t: TransitionName) -> Self {
        match t {
            TransitionName::T01 => Transition::T01,
            TransitionName::T12 => Transition::T12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RabiConfig {
    pub transition: TransitionName,
    /// Absent: 41 points up to 1.5 times the calibrated π amplitude.
    #[serde(rename = "amplitude_MHz", skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<Grid>,
    pub options: RabiOptions,
}

impl Default for RabiConfig {
    fn default() -> Self {
        Self {
            transition: TransitionName::T01,
            amplitude: None,
            options: RabiOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RamseyConfig {
    #[serde(rename = "delay_ns")]
    pub delay: Grid,
    pub options: RamseyOptions,
}

impl Default for RamseyConfig {
    fn default() -> Self {
        Self {
            delay: Grid::new(0.0, 1500.0, 151),
            options: RamseyOptions::default(),
        }
    }
}

/// A target given by amplitudes [(re, im); 3].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomTarget {
    pub name: String,
    pub amplitudes: [[f64; 2]; 3],
}

impl CustomTarget {
    pub fn to_target(&self) -> Result<Target> {
        let a = self.amplitudes;
        Target::new(&self.name, [(a[0][0], a[0][1]), (a[1][0], a[1][1]), (a[2][0], a[2][1])])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TomographyConfig {
    /// Name of a built-in or custom target for `tomo`.
    pub target: String,
    /// Targets of `batch`, by name.
    pub batch: Vec<String>,
    pub custom: Vec<CustomTarget>,
    pub noise: NoiseModel,
}

impl Default for TomographyConfig {
    fn default() -> Self {
        Self {
            target: "psi_a".into(),
            batch: default_targets().into_iter().map(|t| t.name).collect(),
            custom: Vec::new(),
            noise: NoiseModel::default(),
        }
    }
}

impl TomographyConfig {
    /// Resolves a name against the custom targets first, then the built-ins.
    pub fn resolve(&self, name: &str) -> Result<Target> {
        if let Some(c) = self.custom.iter().find(|c| c.name == name) {
            return c.to_target();
        }
        default_targets()
            .into_iter()
            .find(|t| t.name == name)
            .ok_or_else(|| invalid("target", format!("unknown target `{name}`")))
    }

    pub fn batch_targets(&self) -> Result<Vec<Target>> {
        if self.batch.is_empty() {
            return Err(invalid("batch", "empty target list"));
        }
        self.batch.iter().map(|n| self.resolve(n)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub device: DeviceParams,
    pub readout: ReadoutSettings,
    pub pulse: PulseShape,
    /// Replaces the computed cavity pulls when present.
    #[serde(rename = "shifts_MHz", skip_serializing_if = "Option::is_none")]
    pub shifts: Option<[f64; 3]>,
    /// Integration window of the tomography signal.
    #[serde(rename = "window_ns")]
    pub window: f64,
    pub spectrum: SpectrumConfig,
    pub decay_map: DecayMapConfig,
    pub rabi: RabiConfig,
    pub ramsey12: RamseyConfig,
    pub tomography: TomographyConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            output_dir: PathBuf::from("out"),
            device: DeviceParams::reference(),
            readout: ReadoutSettings::default(),
            pulse: PulseShape::default(),
            shifts: None,
            window: DEFAULT_WINDOW_NS,
            spectrum: SpectrumConfig::default(),
            decay_map: DecayMapConfig::default(),
            rabi: RabiConfig::default(),
            ramsey12: RamseyConfig::default(),
            tomography: TomographyConfig::default(),
        }
    }
}

/// Failure to read or parse a config file.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {reason}")]
    Io { path: String, reason: String },
    /// `line` is 1-based; `key` is the offending key when TOML names one.
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        key: Option<String>,
        message: String,
    },
    #[error("{0}")]
    Invalid(#[from] crate::Error),
}

impl RunConfig {
    pub fn from_toml(text: &str, path: &str) -> std::result::Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| text[..s.start].matches('\n').count() + 1).unwrap_or(0);
            let message = e.message().replace('\n', " ");
            let key = message
                .split('`')
                .nth(1)
                .filter(|_| message.starts_with("unknown field") || message.starts_with("missing field"))
                .map(str::to_string);
            ConfigError::Parse {
                path: path.to_string(),
                line,
                key,
                message,
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> std::result::Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::from_toml(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks every block before anything runs.
    pub fn validate(&self) -> Result<()> {
        let ctx = self.context()?;
        if !(self.window > 0.0) || self.window > self.readout.t_end - self.readout.t_start {
            return Err(invalid(
                "window_ns",
                "must be positive and fit inside the readout trace",
            ));
        }
        self.spectrum.omega01.values()?;
        for d in self.decay_map.delta_rm.values()? {
            ReadoutSettings {
                delta_rm: d,
                ..self.readout.clone()
            }
            .validate_against(&ctx.params, &ctx.spectrum)?;
        }
        if self.decay_map.options.noise_rel < 0.0 {
            return Err(invalid("noise_rel", "must be non-negative"));
        }
        if let Some(g) = &self.rabi.amplitude {
            if g.values()?.len() < 5 {
                return Err(invalid("amplitude_MHz", "need at least five points"));
            }
        }
        if self.ramsey12.delay.values()?.iter().any(|d| !(*d >= 0.0)) {
            return Err(invalid("delay_ns", "must be non-negative"));
        }
        let noise = &self.tomography.noise;
        if !(noise.sigma_rel >= 0.0) || !noise.sigma_rel.is_finite() {
            return Err(invalid("sigma_rel", "must be a non-negative number"));
        }
        if noise.bootstrap == 1 {
            return Err(invalid("bootstrap", "use 0 to skip or at least 2 resamples"));
        }
        for c in &self.tomography.custom {
            c.to_target()?;
        }
        self.tomography.resolve(&self.tomography.target)?;
        self.tomography.batch_targets()?;
        Ok(())
    }

    pub fn context(&self) -> Result<Context> {
        Ok(Context::new(
            self.device.clone(),
            self.readout.clone(),
            self.pulse.clone(),
            self.shifts,
        )?
        .with_window(self.window))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_reference_run() {
        let cfg = RunConfig::from_toml("", "x.toml").unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = RunConfig {
            shifts: Some([10.0, 5.9, 3.4]),
            ..RunConfig::default()
        };
        cfg.tomography.custom.push(CustomTarget {
            name: "tilted".into(),
            amplitudes: [[1.0, 0.0], [0.5, 0.5], [0.0, 0.0]],
        });
        let back = RunConfig::from_toml(&cfg.to_toml(), "x.toml").unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_key_names_line_and_key() {
        let text = "seed = 3\n\n[device]\nt1_ns = [800.0, 700.0]\ng0 = 115.0\n";
        match RunConfig::from_toml(text, "run.toml") {
            Err(ConfigError::Parse { line, key, .. }) => {
                assert_eq!(line, 5);
                assert_eq!(key.as_deref(), Some("g0"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn physics_violations_are_named() {
        let text = "[device]\nt2_ns = [1600.0, 2000.0]\n";
        let err = RunConfig::from_toml(text, "run.toml").unwrap_err();
        assert!(
            matches!(
                err,
                ConfigError::Invalid(crate::Error::NegativeDephasing { level: 2, .. })
            ),
            "{err}"
        );
    }

    #[test]
    fn grids_hit_both_ends() {
        let g = Grid::new(0.0, 13.0, 53).values().unwrap();
        assert_eq!((g[0], g[52], g.len()), (0.0, 13.0, 53));
        assert!((g[1] - 0.25).abs() < 1e-15);
        assert!(Grid::new(0.0, 1.0, 0).values().is_err());
    }

    #[test]
    fn custom_targets_shadow_builtins() {
        let mut t = TomographyConfig::default();
        t.custom.push(CustomTarget {
            name: "2".into(),
            amplitudes: [[1.0, 0.0], [0.0, 0.0], [0.0, 0.0]],
        });
        assert_eq!(t.resolve("2").unwrap().state[0].re, 1.0);
        assert!(t.resolve("nope").is_err());
    }
}
