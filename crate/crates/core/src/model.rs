//! The simulated NV center: the "ground truth" that the optimizer only sees
//! through measured counts.

use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::photophysics::{readout_response, NvRates, ReadoutParams, ReadoutResponse, WindowYield};
use crate::spin::{ControlPulse, RwaHamiltonianParams};

/// ¹⁴N hyperfine splitting of the NV ground state (Hz).
pub const N14_HYPERFINE_HZ: f64 = 2.16e6;

/// Hyperfine-resolved transition lines with quasi-static dephasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperfineModel {
    /// Line positions relative to `ω_nv` (rad/s).
    pub offsets: Vec<f64>,
    pub weights: Vec<f64>,
    /// Inhomogeneous dephasing time (s); `f64::INFINITY` disables dephasing.
    #[serde(with = "infinite_as_text")]
    pub t2_star: f64,
    /// Decay order `m` of the free-induction envelope: 2 (Gaussian) or 1 (exponential).
    pub decay_order: f64,
    /// Number of deterministic quadrature nodes for the dephasing average.
    pub dephasing_nodes: usize,
}

impl Default for HyperfineModel {
    fn default() -> Self {
        Self::nitrogen14(2e-6)
    }
}

impl HyperfineModel {
    /// Three equal-weight ¹⁴N lines.
    pub fn nitrogen14(t2_star: f64) -> Self {
        let a = TAU * N14_HYPERFINE_HZ;
        Self {
            offsets: vec![-a, 0.0, a],
            weights: vec![1.0 / 3.0; 3],
            t2_star,
            decay_order: 2.0,
            dephasing_nodes: 9,
        }
    }

    /// One line, no dephasing.
    pub fn single_line() -> Self {
        Self {
            offsets: vec![0.0],
            weights: vec![1.0],
            t2_star: f64::INFINITY,
            decay_order: 2.0,
            dephasing_nodes: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.offsets.is_empty() || self.offsets.len() != self.weights.len() {
            return Err(invalid("hyperfine", "need matching, non-empty offsets and weights"));
        }
        if self.weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(invalid("hyperfine.weights", "must be non-negative"));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(invalid("hyperfine.weights", format!("must sum to 1, got {total}")));
        }
        if !(self.t2_star > 0.0) {
            return Err(invalid("t2_star", "must be positive"));
        }
        if self.decay_order != 1.0 && self.decay_order != 2.0 {
            return Err(invalid("decay_order", "only m = 1 and m = 2 have a quasi-static draw model"));
        }
        if self.dephasing_nodes == 0 {
            return Err(invalid("dephasing_nodes", "must be ≥ 1"));
        }
        Ok(())
    }

    /// Standard deviation of the Gaussian detuning draw, `√2/T2*`.
    pub fn dephasing_sigma(&self) -> f64 {
        std::f64::consts::SQRT_2 / self.t2_star
    }

    /// Quasi-static detuning offsets and their probabilities.
    ///
    /// `m = 2` draws from `N(0, 2/T2*²)` so that `⟨cos δτ⟩ = exp(−(τ/T2*)²)`,
    /// integrated by Gauss–Hermite quadrature. `m = 1` draws from a Cauchy law of
    /// scale `1/T2*` (`⟨cos δτ⟩ = exp(−τ/T2*)`) sampled at quantile midpoints.
    pub fn dephasing_draws(&self) -> Vec<(f64, f64)> {
        let n = self.dephasing_nodes;
        if !self.t2_star.is_finite() || n == 1 {
            return vec![(0.0, 1.0)];
        }
        if self.decay_order == 2.0 {
            let sigma = self.dephasing_sigma();
            gauss_hermite(n)
                .into_iter()
                .map(|(x, w)| (sigma * x, w))
                .collect()
        } else {
            let gamma = 1.0 / self.t2_star;
            (0..n)
                .map(|j| {
                    let q = (j as f64 + 0.5) / n as f64;
                    (gamma * (PI * (q - 0.5)).tan(), 1.0 / n as f64)
                })
                .collect()
        }
    }

    /// Per-line, per-draw detunings seen by the spin for a given drive detuning.
    pub fn ensemble(&self, drive_detuning: f64) -> Vec<(f64, f64)> {
        let draws = self.dephasing_draws();
        let mut out = Vec::with_capacity(self.offsets.len() * draws.len());
        for (&offset, &w) in self.offsets.iter().zip(&self.weights) {
            if w == 0.0 {
                continue;
            }
            for &(delta, v) in &draws {
                out.push((drive_detuning - offset + delta, w * v));
            }
        }
        out
    }
}

/// JSON has no infinity, so an unbounded `T2*` is written as `"inf"`.
mod infinite_as_text {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Number(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str("inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Number(v) => Ok(v),
            Repr::Text(t) if matches!(t.as_str(), "inf" | "infinity") => Ok(f64::INFINITY),
            Repr::Text(t) => Err(D::Error::custom(format!("expected seconds or \"inf\", got {t:?}"))),
        }
    }
}

/// Nodes and weights for `E[f(X)]`, `X ~ N(0, 1)` (Golub–Welsch).
pub fn gauss_hermite(n: usize) -> Vec<(f64, f64)> {
    let mut jacobi = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let b = (k as f64).sqrt();
        jacobi[(k - 1, k)] = b;
        jacobi[(k, k - 1)] = b;
    }
    let eig = SymmetricEigen::new(jacobi);
    let mut nodes: Vec<(f64, f64)> = (0..n)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    nodes.sort_by(|a, b| a.0.total_cmp(&b.0));
    nodes
}

/// How spin populations become photon counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReadoutModel {
    /// Rate-equation readout with the given laser settings.
    Photophysics { params: ReadoutParams },
    /// Counts per shot linear in the `|0⟩` population: `bright·P0 + dark·P1`.
    Ideal { bright: f64, dark: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NvModel {
    pub rates: NvRates,
    /// Maximum Rabi frequency `Ω_max` (rad/s).
    pub rabi_max: f64,
    /// `ω_nv` (rad/s); drive frequencies are referenced to it.
    pub resonance: f64,
    pub hyperfine: HyperfineModel,
    pub readout: ReadoutModel,
    /// Upper bound on `Ω_max·dt` when discretizing pulses.
    pub max_step_angle: f64,
}

impl Default for NvModel {
    fn default() -> Self {
        Self {
            rates: NvRates::default(),
            rabi_max: TAU * 10e6,
            resonance: TAU * 2.87e9,
            hyperfine: HyperfineModel::default(),
            readout: ReadoutModel::Photophysics {
                params: ReadoutParams::initial_guess(NvRates::default().saturation_power_mw),
            },
            max_step_angle: 0.05,
        }
    }
}

impl NvModel {
    /// Spin-only model: single line, no dephasing, perfect readout.
    ///
    /// With `dark = 0` a fully dark shot B pins the gate-verification pair
    /// contrast at 1 whatever shot A does; optimize gates against a nonzero
    /// dark level.
    pub fn ideal(rabi_max: f64) -> Self {
        Self {
            rabi_max,
            hyperfine: HyperfineModel::single_line(),
            readout: ReadoutModel::Ideal {
                bright: 1.0,
                dark: 0.0,
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.rates.validate()?;
        self.hyperfine.validate()?;
        RwaHamiltonianParams::new(0.0, self.rabi_max)?;
        if !(self.max_step_angle > 0.0) {
            return Err(invalid("max_step_angle", "must be positive"));
        }
        match &self.readout {
            ReadoutModel::Photophysics { params } => params.validate(),
            ReadoutModel::Ideal { bright, dark } if *bright >= 0.0 && *dark >= 0.0 => Ok(()),
            ReadoutModel::Ideal { .. } => Err(invalid("readout", "ideal counts must be ≥ 0")),
        }
    }

    pub fn hamiltonian(&self, detuning: f64) -> RwaHamiltonianParams {
        RwaHamiltonianParams {
            detuning,
            rabi_max: self.rabi_max,
        }
    }

    /// `ω_mw − ω_nv` for a drive at `drive_frequency` (rad/s).
    pub fn detuning_of(&self, drive_frequency: f64) -> f64 {
        drive_frequency - self.resonance
    }

    /// Expected counts per shot for `|0⟩` and `|1⟩` preparations.
    pub fn readout_response(&self) -> Result<ReadoutResponse> {
        match &self.readout {
            ReadoutModel::Photophysics { params } => readout_response(&self.rates, params),
            ReadoutModel::Ideal { bright, dark } => Ok(ReadoutResponse {
                spin0: WindowYield {
                    readout: *bright,
                    saturation: 0.0,
                },
                spin1: WindowYield {
                    readout: *dark,
                    saturation: 0.0,
                },
            }),
        }
    }

    /// Calibrated rectangular π pulse about x at full amplitude.
    pub fn pi_reference(&self) -> ControlPulse {
        self.rectangular(PI)
    }

    /// Rectangular x pulse at `Ω_max` with rotation angle `area`.
    pub fn rectangular(&self, area: f64) -> ControlPulse {
        let duration = area / self.rabi_max;
        let n = ControlPulse::samples_for(duration, self.rabi_max, self.max_step_angle);
        ControlPulse::rectangular(self.rabi_max, 0.0, duration, n).expect("positive duration")
    }
}
