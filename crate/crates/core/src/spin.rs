//! Two-level spin dynamics in the rotating frame.
//!
//! The drive Hamiltonian is `H = (ħ/2)(Δσz + u1σx + u2σy)`. Pulses are
//! piecewise constant, so every step propagator is an SU(2) rotation that we
//! write down in closed form; products of those are unitary to rounding.

use std::f64::consts::FRAC_1_SQRT_2;
use std::ops::Mul;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// Rotating-frame drive settings. Angular frequencies in rad/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RwaHamiltonianParams {
    /// `ω_mw − ω_nv`.
    pub detuning: f64,
    /// Largest Rabi frequency the hardware can deliver.
    pub rabi_max: f64,
}

impl RwaHamiltonianParams {
    pub fn new(detuning: f64, rabi_max: f64) -> Result<Self> {
        if !(rabi_max > 0.0) || !rabi_max.is_finite() {
            return Err(invalid("rabi_max", "must be positive and finite"));
        }
        if !detuning.is_finite() {
            return Err(invalid("detuning", "must be finite"));
        }
        Ok(Self { detuning, rabi_max })
    }

    /// Same drive, different detuning.
    pub fn with_detuning(self, detuning: f64) -> Self {
        Self { detuning, ..self }
    }
}

/// Piecewise-constant I/Q envelope. Sample `k` is held on `[k·dt, (k+1)·dt)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PulseRepr")]
pub struct ControlPulse {
    samples: Vec<[f64; 2]>,
    dt: f64,
}

#[derive(Deserialize)]
struct PulseRepr {
    samples: Vec<[f64; 2]>,
    dt: f64,
}

impl TryFrom<PulseRepr> for ControlPulse {
    type Error = Error;

    fn try_from(r: PulseRepr) -> Result<Self> {
        Self::new(r.samples, r.dt)
    }
}

impl ControlPulse {
    pub fn new(samples: Vec<[f64; 2]>, dt: f64) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidPulse(format!("dt must be positive, got {dt}")));
        }
        if samples.is_empty() {
            return Err(Error::InvalidPulse("pulse has no samples".into()));
        }
        if let Some(k) = samples
            .iter()
            .position(|s| !s[0].is_finite() || !s[1].is_finite())
        {
            return Err(Error::InvalidPulse(format!("sample {k} is not finite")));
        }
        Ok(Self { samples, dt })
    }

    /// Constant-amplitude pulse with phase `phase` (radians, 0 is the x axis).
    pub fn rectangular(rabi: f64, phase: f64, duration: f64, n_samples: usize) -> Result<Self> {
        if n_samples == 0 || !(duration > 0.0) {
            return Err(invalid("duration", "rectangular pulse needs samples and a positive duration"));
        }
        let s = [rabi * phase.cos(), rabi * phase.sin()];
        Self::new(vec![s; n_samples], duration / n_samples as f64)
    }

    /// Sample count such that `rabi_max · dt ≤ max_step_angle`.
    pub fn samples_for(duration: f64, rabi_max: f64, max_step_angle: f64) -> usize {
        ((rabi_max * duration / max_step_angle).ceil() as usize).max(1)
    }

    pub fn samples(&self) -> &[[f64; 2]] {
        &self.samples
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.dt * self.samples.len() as f64
    }

    /// Largest `√(u1²+u2²)` over the pulse.
    pub fn peak_amplitude(&self) -> f64 {
        self.samples
            .iter()
            .map(|s| s[0].hypot(s[1]))
            .fold(0.0, f64::max)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            samples: self
                .samples
                .iter()
                .map(|s| [s[0] * factor, s[1] * factor])
                .collect(),
            dt: self.dt,
        }
    }

    /// `self` followed by `next`. Both must share `dt`.
    pub fn concat(&self, next: &ControlPulse) -> Result<Self> {
        if (self.dt - next.dt).abs() > 1e-12 * self.dt {
            return Err(Error::InvalidPulse("cannot join pulses with different dt".into()));
        }
        let mut samples = self.samples.clone();
        samples.extend_from_slice(&next.samples);
        Self::new(samples, self.dt)
    }
}

/// 2×2 complex matrix, row-major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Unitary2(pub [[Complex64; 2]; 2]);

impl Unitary2 {
    pub const IDENTITY: Unitary2 = Unitary2([[ONE, ZERO], [ZERO, ONE]]);

    /// `exp(−i c·σ)` for the coefficient vector `c = (cx, cy, cz)`.
    pub fn from_axis_angle(c: [f64; 3]) -> Self {
        let angle = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
        if angle == 0.0 {
            return Self::IDENTITY;
        }
        let (s, co) = angle.sin_cos();
        let k = s / angle;
        let (x, y, z) = (c[0] * k, c[1] * k, c[2] * k);
        Unitary2([
            [Complex64::new(co, -z), Complex64::new(-y, -x)],
            [Complex64::new(y, -x), Complex64::new(co, z)],
        ])
    }

    pub fn pauli_x() -> Self {
        Unitary2([[ZERO, ONE], [ONE, ZERO]])
    }

    pub fn pauli_y() -> Self {
        Unitary2([[ZERO, -I], [I, ZERO]])
    }

    pub fn pauli_z() -> Self {
        Unitary2([[ONE, ZERO], [ZERO, -ONE]])
    }

    /// Free precession `exp(−i (Δτ/2) σz)`.
    pub fn free_evolution(detuning: f64, tau: f64) -> Self {
        let half = 0.5 * detuning * tau;
        Unitary2([
            [Complex64::from_polar(1.0, -half), ZERO],
            [ZERO, Complex64::from_polar(1.0, half)],
        ])
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.0[row][col]
    }

    pub fn dagger(&self) -> Self {
        let m = &self.0;
        Unitary2([[m[0][0].conj(), m[1][0].conj()], [m[0][1].conj(), m[1][1].conj()]])
    }

    pub fn det(&self) -> Complex64 {
        self.0[0][0] * self.0[1][1] - self.0[0][1] * self.0[1][0]
    }

    pub fn apply(&self, psi: [Complex64; 2]) -> [Complex64; 2] {
        [
            self.0[0][0] * psi[0] + self.0[0][1] * psi[1],
            self.0[1][0] * psi[0] + self.0[1][1] * psi[1],
        ]
    }

    /// Frobenius norm of `U†U − I`.
    pub fn unitarity_error(&self) -> f64 {
        let p = self.dagger() * *self;
        let mut acc = 0.0;
        for r in 0..2 {
            for c in 0..2 {
                let target = if r == c { ONE } else { ZERO };
                acc += (p.0[r][c] - target).norm_sqr();
            }
        }
        acc.sqrt()
    }

    /// `|⟨1|U|0⟩|²`.
    pub fn transfer(&self) -> f64 {
        self.0[1][0].norm_sqr()
    }

    /// Distance between two unitaries after removing the relative global phase,
    /// `min_φ ‖A − e^{iφ}B‖_F`.
    pub fn phase_distance(&self, other: &Unitary2) -> f64 {
        let mut overlap = ZERO;
        for r in 0..2 {
            for c in 0..2 {
                overlap += other.0[r][c].conj() * self.0[r][c];
            }
        }
        // the residual at the optimal phase, formed directly: √(4 − 2|overlap|)
        // loses half the digits for nearly equal matrices
        let phase = if overlap.norm() > 0.0 { overlap / overlap.norm() } else { ONE };
        let mut sum = 0.0;
        for r in 0..2 {
            for c in 0..2 {
                sum += (self.0[r][c] - phase * other.0[r][c]).norm_sqr();
            }
        }
        sum.sqrt()
    }
}

impl Mul for Unitary2 {
    type Output = Unitary2;

    fn mul(self, rhs: Unitary2) -> Unitary2 {
        let a = &self.0;
        let b = &rhs.0;
        Unitary2([
            [
                a[0][0] * b[0][0] + a[0][1] * b[1][0],
                a[0][0] * b[0][1] + a[0][1] * b[1][1],
            ],
            [
                a[1][0] * b[0][0] + a[1][1] * b[1][0],
                a[1][0] * b[0][1] + a[1][1] * b[1][1],
            ],
        ])
    }
}

/// Ordered product `U_N ⋯ U_1` of closed-form step propagators.
///
/// Each step is `exp(−i (dt/2)(s·u1 σx + s·u2 σy + Δ σz))` with `s = amplitude_scale`.
pub fn propagate(
    params: &RwaHamiltonianParams,
    pulse: &ControlPulse,
    amplitude_scale: f64,
) -> Result<Unitary2> {
    if !(amplitude_scale > 0.0 && amplitude_scale <= 1.0) {
        return Err(invalid("amplitude_scale", format!("{amplitude_scale} not in (0, 1]")));
    }
    let limit = params.rabi_max * (1.0 + 1e-9);
    if let Some(k) = pulse
        .samples
        .iter()
        .position(|s| s[0].hypot(s[1]) > limit)
    {
        return Err(Error::InvalidPulse(format!(
            "sample {k} exceeds rabi_max {:.6e} rad/s",
            params.rabi_max
        )));
    }
    let half = 0.5 * pulse.dt;
    let dz = half * params.detuning;
    let mut u = Unitary2::IDENTITY;
    for s in &pulse.samples {
        let step = Unitary2::from_axis_angle([
            half * amplitude_scale * s[0],
            half * amplitude_scale * s[1],
            dz,
        ]);
        u = step * u;
    }
    Ok(u)
}

/// Spin-state labels used for fidelity contracts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpinState {
    Zero,
    One,
    /// `(|0⟩ + iᵃ|1⟩)/√2` for `a ∈ {0, 1, 2, 3}`.
    Superposition(u8),
}

impl SpinState {
    pub fn ket(self) -> Result<[Complex64; 2]> {
        Ok(match self {
            SpinState::Zero => [ONE, ZERO],
            SpinState::One => [ZERO, ONE],
            SpinState::Superposition(a) if a < 4 => {
                let phase = I.powu(a as u32);
                [Complex64::new(FRAC_1_SQRT_2, 0.0), phase * FRAC_1_SQRT_2]
            }
            SpinState::Superposition(a) => {
                return Err(invalid("state", format!("superposition phase index {a} not in 0..4")))
            }
        })
    }
}

/// `|⟨target|U|initial⟩|²`.
pub fn state_fidelity(u: &Unitary2, initial: SpinState, target: SpinState) -> Result<f64> {
    let out = u.apply(initial.ket()?);
    let t = target.ket()?;
    Ok((t[0].conj() * out[0] + t[1].conj() * out[1]).norm_sqr())
}

/// `U = e^{iθ} exp(−i c·σ)` with the principal branch described on [`decompose`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisAngleDecomposition {
    pub coefficients: [f64; 3],
    pub angle: f64,
    pub axis: [f64; 3],
    /// `U` is within tolerance of `±I` and the axis carries no information.
    pub degenerate: bool,
}

impl AxisAngleDecomposition {
    pub fn unitary(&self) -> Unitary2 {
        Unitary2::from_axis_angle(self.coefficients)
    }
}

const DEGENERATE_TOL: f64 = 1e-12;

/// Axis-angle coefficients of `U` modulo global phase.
///
/// `U` is first divided by `√det U`, leaving an SU(2) matrix `a·I − i b·σ`. The
/// sign of that square root is fixed by `a ≥ 0`, so the returned angle
/// `c = atan2(|b|, a)` lies in `[0, π/2]`, the principal branch once global phase
/// is discarded (`−exp(−i c n·σ) = exp(−i (π−c)(−n)·σ)`). Angles `c + kπ/2` of
/// other branches describe the same projective rotation up to axis sign.
pub fn decompose(u: &Unitary2) -> Result<AxisAngleDecomposition> {
    if u.unitarity_error() > 1e-8 {
        return Err(invalid("unitary", "matrix is not unitary"));
    }
    let root = u.det().sqrt();
    let m = &u.0;
    let v = |r: usize, c: usize| m[r][c] / root;
    let mut a = 0.5 * (v(0, 0) + v(1, 1)).re;
    let mut b = [
        -0.5 * (v(0, 1) + v(1, 0)).im,
        0.5 * (v(1, 0) - v(0, 1)).re,
        0.5 * (v(1, 1) - v(0, 0)).im,
    ];
    if a < 0.0 {
        a = -a;
        b = [-b[0], -b[1], -b[2]];
    }
    let sin_c = (b[0] * b[0] + b[1] * b[1] + b[2] * b[2]).sqrt();
    let angle = sin_c.atan2(a);
    if sin_c < DEGENERATE_TOL {
        return Ok(AxisAngleDecomposition {
            coefficients: [0.0; 3],
            angle: 0.0,
            axis: [1.0, 0.0, 0.0],
            degenerate: true,
        });
    }
    let axis = [b[0] / sin_c, b[1] / sin_c, b[2] / sin_c];
    Ok(AxisAngleDecomposition {
        coefficients: [axis[0] * angle, axis[1] * angle, axis[2] * angle],
        angle,
        axis,
        degenerate: false,
    })
}

/// Distance of a coefficient vector from the `(π/2)_x` manifold
/// `{c_x = π/4 + kπ/2, c_y = c_z = 0}`.
pub fn half_pi_x_distance(c: [f64; 3]) -> f64 {
    let quarter = std::f64::consts::FRAC_PI_4;
    let half = std::f64::consts::FRAC_PI_2;
    let k = ((c[0] - quarter) / half).round();
    let dx = c[0] - (quarter + k * half);
    (dx * dx + c[1] * c[1] + c[2] * c[2]).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn rabi() -> RwaHamiltonianParams {
        RwaHamiltonianParams::new(0.0, 2.0 * PI * 10e6).unwrap()
    }

    #[test]
    fn pi_pulse_inverts() {
        let p = rabi();
        let pulse = ControlPulse::rectangular(p.rabi_max, 0.0, PI / p.rabi_max, 64).unwrap();
        let u = propagate(&p, &pulse, 1.0).unwrap();
        assert!((u.transfer() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_pi_pulse_is_minus_identity() {
        let p = rabi();
        let pulse = ControlPulse::rectangular(p.rabi_max, 0.3, 2.0 * PI / p.rabi_max, 128).unwrap();
        let u = propagate(&p, &pulse, 1.0).unwrap();
        assert!((state_fidelity(&u, SpinState::Zero, SpinState::Zero).unwrap() - 1.0).abs() < 1e-12);
        assert!(u.phase_distance(&Unitary2::IDENTITY) < 1e-9);
        assert!((u.get(0, 0) + ONE).norm() < 1e-9);
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = rabi();
        assert!(ControlPulse::new(vec![[f64::NAN, 0.0]], 1e-9).is_err());
        let pulse = ControlPulse::rectangular(p.rabi_max, 0.0, 1e-7, 10).unwrap();
        assert!(propagate(&p, &pulse, 0.0).is_err());
        assert!(propagate(&p, &pulse, 1.5).is_err());
        let hot = ControlPulse::rectangular(2.0 * p.rabi_max, 0.0, 1e-7, 10).unwrap();
        assert!(matches!(propagate(&p, &hot, 1.0), Err(Error::InvalidPulse(_))));
        assert!(RwaHamiltonianParams::new(0.0, 0.0).is_err());
        assert!(state_fidelity(&Unitary2::IDENTITY, SpinState::Superposition(4), SpinState::Zero).is_err());
    }

    #[test]
    fn fidelity_labels() {
        let x_pi = Unitary2::from_axis_angle([PI / 2.0, 0.0, 0.0]);
        assert!((state_fidelity(&x_pi, SpinState::Zero, SpinState::One).unwrap() - 1.0).abs() < 1e-15);
        let half = Unitary2::from_axis_angle([PI / 4.0, 0.0, 0.0]);
        // exp(-i π/4 σx)|0⟩ = (|0⟩ − i|1⟩)/√2
        let f = state_fidelity(&half, SpinState::Zero, SpinState::Superposition(3)).unwrap();
        assert!((f - 1.0).abs() < 1e-15);
        assert!(state_fidelity(&Unitary2::IDENTITY, SpinState::Zero, SpinState::Zero).unwrap() == 1.0);
    }

    #[test]
    fn decompose_quarter_x() {
        let d = decompose(&Unitary2::from_axis_angle([PI / 4.0, 0.0, 0.0])).unwrap();
        assert!((d.coefficients[0] - PI / 4.0).abs() < 1e-12);
        assert!(d.coefficients[1].abs() < 1e-12 && d.coefficients[2].abs() < 1e-12);
        assert!(!d.degenerate);
    }

    #[test]
    fn decompose_identity_is_degenerate() {
        let d = decompose(&Unitary2::IDENTITY).unwrap();
        assert!(d.degenerate);
        assert_eq!(d.angle, 0.0);
        let minus = Unitary2([[-ONE, ZERO], [ZERO, -ONE]]);
        assert!(decompose(&minus).unwrap().degenerate);
    }

    #[test]
    fn decompose_ignores_global_phase() {
        let u = Unitary2::from_axis_angle([0.3, -0.2, 0.5]);
        let phase = Complex64::from_polar(1.0, 1.234);
        let shifted = Unitary2([
            [u.0[0][0] * phase, u.0[0][1] * phase],
            [u.0[1][0] * phase, u.0[1][1] * phase],
        ]);
        let d = decompose(&shifted).unwrap();
        for (got, want) in d.coefficients.iter().zip([0.3, -0.2, 0.5]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn free_evolution_matches_z_rotation() {
        let f = Unitary2::free_evolution(2.0, 0.7);
        let r = Unitary2::from_axis_angle([0.0, 0.0, 0.7]);
        assert!(f.phase_distance(&r) < 1e-14);
    }

    #[test]
    fn manifold_distance() {
        assert!(half_pi_x_distance([PI / 4.0, 0.0, 0.0]) < 1e-15);
        assert!(half_pi_x_distance([3.0 * PI / 4.0, 0.0, 0.0]) < 1e-15);
        assert!(half_pi_x_distance([-PI / 4.0, 0.0, 0.0]) < 1e-15);
        assert!((half_pi_x_distance([0.0, 0.0, 0.0]) - PI / 4.0).abs() < 1e-15);
    }
}
