//! Run configuration, read from TOML. Every section and field is optional.

use std::f64::consts::TAU;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::experiment::Backend;
use crate::error::{invalid, Error, Result};
use crate::model::NvModel;
use crate::optimizer::{DcrabConfig, NelderMeadConfig};
use crate::photophysics::{ReadoutParams, SaturationNormalization};
use crate::protocols::AmplitudeScan;
use crate::pulse::{Basis, BasisKind, RestrictionMode, RestrictionPolicy};
use crate::sensitivity::SensitivityParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed for server-side noise and dCRAB basis draws.
    pub seed: u64,
    pub model: NvModel,
    pub backend: Backend,
    pub saturation_normalization: SaturationNormalization,
    pub step1: Step1Config,
    pub step2: Step2Config,
    pub scan: ScanConfig,
    pub sensitivity: SensitivityParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            model: NvModel::default(),
            backend: Backend::default(),
            saturation_normalization: SaturationNormalization::default(),
            step1: Step1Config::default(),
            step2: Step2Config::default(),
            scan: ScanConfig::default(),
            sensitivity: SensitivityParams::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.step1.repetitions < 2 {
            return Err(invalid("step1.repetitions", "need at least two"));
        }
        if let Some(p) = &self.step1.initial {
            p.validate()?;
        }
        let s2 = &self.step2;
        if !(s2.pulse_duration_ns > 0.0) {
            return Err(invalid("step2.pulse_duration_ns", "must be positive"));
        }
        if !(s2.guess_amplitude >= 0.0 && s2.guess_amplitude <= 1.0) {
            return Err(invalid("step2.guess_amplitude", "fraction of Ω_max in [0, 1]"));
        }
        if s2.n_set == 0 || s2.max_superiterations == 0 {
            return Err(invalid("step2", "n_set and max_superiterations must be ≥ 1"));
        }
        for g in [&self.scan.detunings_hz, &self.scan.taus_s, &self.scan.ramsey_detunings_hz] {
            g.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Step1Config {
    /// Shots per evaluation `N`; absent for expected counts.
    pub shots: Option<u64>,
    pub repetitions: usize,
    /// Starting point; the standard initial guess at the model's `P_sat` if absent.
    pub initial: Option<ReadoutParams>,
    pub nelder_mead: NelderMeadConfig,
}

impl Default for Step1Config {
    fn default() -> Self {
        Self {
            shots: Some(10_000),
            repetitions: 10,
            initial: None,
            nelder_mead: NelderMeadConfig {
                max_evaluations: 400,
                tol_f: 1e-4,
                reevaluate: true,
                ..NelderMeadConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// Robust inversion for pulsed ODMR.
    #[default]
    Podmr,
    /// Robust (π/2)_x gate for Ramsey, via the gate-verification FoM.
    Gate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Step2Config {
    pub target: Target,
    pub pulse_duration_ns: f64,
    /// Amplitude of the rectangular initial guess as a fraction of `Ω_max`.
    pub guess_amplitude: f64,
    pub basis: BasisKind,
    pub restriction: RestrictionMode,
    pub n_set: usize,
    pub max_superiterations: usize,
    /// Nelder–Mead budget per superiteration.
    pub max_evaluations: usize,
    pub tol_f: f64,
    pub tol_super: f64,
    /// Re-measure the incumbent to average down FoM noise.
    pub reevaluate: bool,
    /// Initial simplex edge as a fraction of `Ω_max`.
    pub coefficient_step: Option<f64>,
    pub scan: AmplitudeScan,
    pub drive_detuning_hz: f64,
    /// Shots per evaluation; absent for expected counts.
    pub shots: Option<u64>,
    /// Step-1 laser settings applied to every pulse measurement.
    pub readout: Option<ReadoutParams>,
}

impl Default for Step2Config {
    fn default() -> Self {
        Self {
            target: Target::Podmr,
            pulse_duration_ns: 600.0,
            guess_amplitude: 1.0,
            basis: BasisKind::Fourier,
            restriction: RestrictionMode::CutOff,
            n_set: 4,
            max_superiterations: 10,
            max_evaluations: 600,
            tol_f: 1e-6,
            tol_super: 1e-4,
            reevaluate: false,
            coefficient_step: None,
            scan: AmplitudeScan::default(),
            drive_detuning_hz: 0.0,
            shots: None,
            readout: None,
        }
    }
}

impl Step2Config {
    pub fn duration(&self) -> f64 {
        self.pulse_duration_ns * 1e-9
    }

    pub fn drive_detuning(&self) -> f64 {
        TAU * self.drive_detuning_hz
    }

    pub fn dcrab(&self, rabi_max: f64, seed: u64) -> DcrabConfig {
        let t = self.duration();
        let basis = match self.basis {
            BasisKind::Fourier => Basis::fourier_default(t),
            BasisKind::Sigmoid => Basis::sigmoid_default(t),
        };
        let restriction = match self.restriction {
            RestrictionMode::CutOff => RestrictionPolicy::cut_off(rabi_max),
            RestrictionMode::BandwidthLimited => RestrictionPolicy::bandwidth_limited(rabi_max),
        };
        DcrabConfig {
            n_set: self.n_set,
            max_superiterations: self.max_superiterations,
            restriction,
            nelder_mead: NelderMeadConfig {
                max_evaluations: self.max_evaluations,
                tol_f: self.tol_f,
                reevaluate: self.reevaluate,
                ..NelderMeadConfig::default()
            },
            coefficient_step: self.coefficient_step.map(|f| f * rabi_max),
            tol_super: self.tol_super,
            ..DcrabConfig::new(basis, rabi_max, seed)
        }
    }
}

/// `count` evenly spaced points from `start` to `stop` inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub start: f64,
    pub stop: f64,
    pub count: usize,
}

impl Grid {
    pub fn points(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.start];
        }
        let step = (self.stop - self.start) / (self.count - 1) as f64;
        (0..self.count).map(|k| self.start + step * k as f64).collect()
    }

    fn validate(&self) -> Result<()> {
        if self.count == 0 || !self.start.is_finite() || !self.stop.is_finite() {
            return Err(invalid("grid", "need finite ends and at least one point"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanConfig {
    pub scales: AmplitudeScan,
    /// Pulsed-ODMR spectrum axis (Hz).
    pub detunings_hz: Grid,
    /// Ramsey free-precession times (s).
    pub taus_s: Grid,
    /// Drive detuning of the amplitude-scan fringes (Hz).
    pub ramsey_detuning_hz: f64,
    /// Drive detunings of the detuning-scan fringes (Hz).
    pub ramsey_detunings_hz: Grid,
    pub shots: Option<u64>,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            scales: AmplitudeScan::default(),
            detunings_hz: Grid {
                start: -20e6,
                stop: 20e6,
                count: 81,
            },
            taus_s: Grid {
                start: 0.0,
                stop: 3e-6,
                count: 301,
            },
            ramsey_detuning_hz: 0.0,
            ramsey_detunings_hz: Grid {
                start: -10e6,
                stop: 10e6,
                count: 11,
            },
            shots: None,
        }
    }
}
