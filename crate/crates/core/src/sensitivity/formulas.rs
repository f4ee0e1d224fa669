use serde::{Deserialize, Serialize};

use super::fit::{GaussianDipFit, RamseyFit};
use crate::error::{invalid, Error, Result};

/// Reduced Planck constant (J·s).
pub const HBAR: f64 = 1.054_571_817e-34;
/// Bohr magneton (J/T).
pub const MU_B: f64 = 9.274_010_078_3e-24;
/// Free-electron g factor.
pub const G_E: f64 = 2.002_319_304;

/// `√(e/(8 ln 2))`, the lineshape factor of a Gaussian dip.
pub const GAUSSIAN_LINESHAPE_FACTOR: f64 = 0.700_147_458_902_091_6;

/// Gyromagnetic ratio `g_e·μ_B/ħ` (rad/(s·T)).
pub fn gamma_nv(g_e: f64) -> f64 {
    g_e * MU_B / HBAR
}

/// Inputs shared by the sensitivity formulas. Times in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensitivityParams {
    pub spin_factor: f64,
    pub g_e: f64,
    /// Per-shot overhead `t_m`.
    pub t_m: f64,
    /// Initialization / readout time `t_i`.
    pub t_i: f64,
    /// Pulse length `T_π` of the pulsed-ODMR inversion.
    pub t_pi: f64,
    /// Counts per shot `R̄`.
    pub mean_counts: f64,
    pub lineshape_factor: f64,
}

impl Default for SensitivityParams {
    fn default() -> Self {
        Self {
            spin_factor: 1.0,
            g_e: G_E,
            t_m: 1.2e-6,
            t_i: 0.5e-6,
            t_pi: 200e-9,
            mean_counts: 0.05,
            lineshape_factor: GAUSSIAN_LINESHAPE_FACTOR,
        }
    }
}

impl SensitivityParams {
    /// `t_m = t_w + 2·t_i`.
    pub fn with_overhead(mut self, t_w: f64, t_i: f64) -> Self {
        self.t_i = t_i;
        self.t_m = t_w + 2.0 * t_i;
        self
    }

    pub fn gamma(&self) -> f64 {
        gamma_nv(self.g_e)
    }
}

/// `η_sp = ħ/(S·g_e·μ_B·√t_m)` (T/√Hz).
pub fn eta_spin_projection(spin_factor: f64, g_e: f64, t_m: f64) -> Result<f64> {
    if !(t_m > 0.0) {
        return Err(invalid("t_m", "must be positive"));
    }
    Ok(HBAR / (spin_factor * g_e * MU_B) / t_m.sqrt())
}

/// `κ = √((t_m + 2·t_i)/t_m)`.
pub fn kappa_exp(t_m: f64, t_i: f64) -> Result<f64> {
    if !(t_m > 0.0) || t_i < 0.0 {
        return Err(invalid("t_m", "need t_m > 0 and t_i ≥ 0"));
    }
    Ok(((t_m + 2.0 * t_i) / t_m).sqrt())
}

/// `f_d = exp((t_m/T2*)^m)`.
pub fn decoherence_factor(t_m: f64, t2_star: f64, m: f64) -> Result<f64> {
    if t_m < 0.0 || !(t2_star > 0.0) {
        return Err(invalid("t2_star", "need t_m ≥ 0 and T2* > 0"));
    }
    Ok((t_m / t2_star).powf(m).exp())
}

/// Pulsed-ODMR sensitivity `𝒫·σ_f/(γ·C̄·√R̄)·√(T_π + t_m)` with `σ_f` the
/// fitted FWHM in rad/s.
pub fn eta_podmr(fit: &GaussianDipFit, params: &SensitivityParams) -> Result<f64> {
    if !(fit.contrast > 0.0) {
        return Err(Error::NonPositiveContrast(fit.contrast));
    }
    if !(params.mean_counts > 0.0) {
        return Err(invalid("mean_counts", "must be positive"));
    }
    Ok(params.lineshape_factor * fit.fwhm() / (params.gamma() * fit.contrast * params.mean_counts.sqrt())
        * (params.t_pi + params.t_m).sqrt())
}

/// Ramsey sensitivity `exp((τ/T2*)^m)·√(τ + t_m)/(γ·C̄·τ)`.
pub fn eta_ramsey(fit: &RamseyFit, params: &SensitivityParams, tau: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(invalid("tau", "must be positive"));
    }
    if !(fit.contrast > 0.0) {
        return Err(Error::NonPositiveContrast(fit.contrast));
    }
    let decay = decoherence_factor(tau, fit.t2_star, fit.decay_order)?;
    Ok(decay * (tau + params.t_m).sqrt() / (fit.contrast * params.gamma() * tau))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lineshape_constant() {
        let direct = (std::f64::consts::E / (8.0 * 2f64.ln())).sqrt();
        assert!((GAUSSIAN_LINESHAPE_FACTOR - direct).abs() < 1e-15);
        assert!((GAUSSIAN_LINESHAPE_FACTOR - 0.70).abs() < 0.01);
    }

    #[test]
    fn spin_projection_scaling() {
        let one = eta_spin_projection(1.0, G_E, 1.0).unwrap();
        assert!((one - 5.69e-12).abs() < 0.02e-12, "{one}");
        assert!((eta_spin_projection(1.0, G_E, 4.0).unwrap() - one / 2.0).abs() < 1e-24);
        assert!((eta_spin_projection(2.0, G_E, 1.0).unwrap() - one / 2.0).abs() < 1e-24);
        assert!(eta_spin_projection(1.0, G_E, 0.0).is_err());
    }

    #[test]
    fn kappa_and_decoherence_values() {
        assert_eq!(kappa_exp(1e-6, 0.0).unwrap(), 1.0);
        assert!((kappa_exp(1e-6, 1e-6).unwrap() - 3f64.sqrt()).abs() < 1e-15);
        assert!((kappa_exp(1e3, 1e-6).unwrap() - 1.0).abs() < 1e-8);
        assert_eq!(decoherence_factor(0.0, 1e-6, 2.0).unwrap(), 1.0);
        for m in [1.0, 2.0, 3.0] {
            assert!((decoherence_factor(1e-6, 1e-6, m).unwrap() - std::f64::consts::E).abs() < 1e-15);
        }
        assert!((decoherence_factor(0.5e-6, 1e-6, 2.0).unwrap() - 1.2840254166877414).abs() < 1e-15);
    }

    #[test]
    fn gamma_round_trip() {
        // 28.0 GHz/T for a free electron
        let g = gamma_nv(G_E) / (2.0 * std::f64::consts::PI);
        assert!((g - 28.025e9).abs() < 0.01e9, "{g}");
    }
}
