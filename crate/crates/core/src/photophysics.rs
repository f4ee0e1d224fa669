//! Optical initialization and readout of the NV spin.
//!
//! Five-level rate model over `{g0, g1, e0, e1, m}`: spin-conserving optical
//! pumping and radiative decay, spin-selective inter-system crossing into the
//! metastable singlet `m`, and a slow return from `m` that favours `g0`. The
//! `m_s = ±1` sublevels are lumped into `g1`/`e1`.

use nalgebra::{SMatrix, SVector};
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub const G0: usize = 0;
pub const G1: usize = 1;
pub const E0: usize = 2;
pub const E1: usize = 3;
pub const M: usize = 4;

type Augmented = SMatrix<f64, 6, 6>;

/// Transition rates (1/s) and detection parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NvRates {
    /// Spin-conserving `e → g` radiative decay.
    pub radiative: f64,
    /// `e0 → m`.
    pub isc_spin0: f64,
    /// `e1 → m`.
    pub isc_spin1: f64,
    pub metastable_to_g0: f64,
    pub metastable_to_g1: f64,
    /// Optical pumping rate approached at infinite laser power.
    pub pump_max: f64,
    /// Laser power (mW) at which pumping reaches half of `pump_max`.
    pub saturation_power_mw: f64,
    /// Probability that an emitted photon is counted.
    pub collection_efficiency: f64,
    /// Dark and stray-light counts (1/s).
    pub background_rate: f64,
}

impl Default for NvRates {
    fn default() -> Self {
        let metastable_exit = 1.0 / 300e-9;
        Self {
            radiative: 1.0 / 12e-9,
            isc_spin0: 1.0 / 300e-9,
            isc_spin1: 1.0 / 24e-9,
            metastable_to_g0: metastable_exit * 2.0 / 3.0,
            metastable_to_g1: metastable_exit / 3.0,
            pump_max: 2.0e8,
            saturation_power_mw: 10.0,
            collection_efficiency: 0.005,
            background_rate: 1.0e3,
        }
    }
}

impl NvRates {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("radiative", self.radiative),
            ("isc_spin0", self.isc_spin0),
            ("isc_spin1", self.isc_spin1),
            ("metastable_to_g0", self.metastable_to_g0),
            ("metastable_to_g1", self.metastable_to_g1),
            ("pump_max", self.pump_max),
            ("collection_efficiency", self.collection_efficiency),
            ("background_rate", self.background_rate),
        ];
        for (name, v) in fields {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(invalid("rates", format!("{name} must be finite and ≥ 0, got {v}")));
            }
        }
        if !(self.saturation_power_mw > 0.0) {
            return Err(invalid("saturation_power_mw", "must be positive"));
        }
        Ok(())
    }

    /// `r_∞ · P / (P + P_sat)`.
    pub fn pump_rate(&self, power_mw: f64) -> f64 {
        self.pump_max * power_mw / (power_mw + self.saturation_power_mw)
    }

    /// `1 / (γ_m→g0 + γ_m→g1)`.
    pub fn metastable_lifetime(&self) -> f64 {
        1.0 / (self.metastable_to_g0 + self.metastable_to_g1)
    }

    fn generator(&self, pump: f64) -> Augmented {
        let mut q = Augmented::zeros();
        let mut link = |from: usize, to: usize, rate: f64| {
            q[(to, from)] += rate;
            q[(from, from)] -= rate;
        };
        link(G0, E0, pump);
        link(G1, E1, pump);
        link(E0, G0, self.radiative);
        link(E1, G1, self.radiative);
        link(E0, M, self.isc_spin0);
        link(E1, M, self.isc_spin1);
        link(M, G0, self.metastable_to_g0);
        link(M, G1, self.metastable_to_g1);
        let emission = self.collection_efficiency * self.radiative;
        q[(5, E0)] = emission;
        q[(5, E1)] = emission;
        q
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Laser {
    Off,
    On { power_mw: f64 },
}

/// Level populations ordered `[g0, g1, e0, e1, m]`.
pub type Populations = [f64; 5];

pub const THERMAL: Populations = [0.5, 0.5, 0.0, 0.0, 0.0];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evolution {
    pub populations: Populations,
    /// Expected detected photons (excluding background) during the interval.
    pub photons: f64,
}

fn check_populations(p: &Populations) -> Result<()> {
    if p.iter().any(|&x| !(x >= 0.0)) {
        return Err(invalid("populations", "must be non-negative"));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(invalid("populations", format!("must sum to 1, got {sum}")));
    }
    Ok(())
}

/// Propagator of the augmented rate equations (populations + photon tally).
#[derive(Debug, Clone, Copy)]
pub struct RatePropagator(Augmented);

impl RatePropagator {
    pub fn new(rates: &NvRates, laser: Laser, duration: f64) -> Result<Self> {
        if !(duration >= 0.0) || !duration.is_finite() {
            return Err(invalid("duration", format!("must be finite and ≥ 0, got {duration}")));
        }
        let pump = match laser {
            Laser::Off => 0.0,
            Laser::On { power_mw } if power_mw >= 0.0 => rates.pump_rate(power_mw),
            Laser::On { .. } => return Err(invalid("power_mw", "must be ≥ 0")),
        };
        Ok(Self((rates.generator(pump) * duration).exp()))
    }

    pub fn apply(&self, initial: &Populations) -> Evolution {
        let mut v = SVector::<f64, 6>::zeros();
        v.fixed_rows_mut::<5>(0).copy_from_slice(initial);
        let out = self.0 * v;
        let mut populations = [0.0; 5];
        populations.copy_from_slice(out.fixed_rows::<5>(0).as_slice());
        Evolution {
            populations,
            photons: out[5],
        }
    }
}

/// Solve the rate equations over `duration` seconds.
pub fn evolve_populations(
    rates: &NvRates,
    laser: Laser,
    initial: &Populations,
    duration: f64,
) -> Result<Evolution> {
    check_populations(initial)?;
    Ok(RatePropagator::new(rates, laser, duration)?.apply(initial))
}

/// Step-1 search space: laser power, laser duration, readout window, wait time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReadoutParams {
    pub laser_power_mw: f64,
    pub laser_duration_ns: f64,
    pub readout_window_ns: f64,
    pub wait_time_ns: f64,
}

impl ReadoutParams {
    pub const POWER_MW: (f64, f64) = (2.0, 40.0);
    pub const DURATION_NS: (f64, f64) = (300.0, 2000.0);
    /// Readout window as a fraction of the laser duration.
    pub const WINDOW_FRACTION: (f64, f64) = (0.25, 0.75);
    pub const WAIT_NS: (f64, f64) = (0.0, 1000.0);

    /// Initial guess with the power at `min(P_sat, 40 mW)`.
    pub fn initial_guess(saturation_power_mw: f64) -> Self {
        Self {
            laser_power_mw: saturation_power_mw.clamp(Self::POWER_MW.0, Self::POWER_MW.1),
            laser_duration_ns: 1000.0,
            readout_window_ns: 450.0,
            wait_time_ns: 300.0,
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [
            self.laser_power_mw,
            self.laser_duration_ns,
            self.readout_window_ns,
            self.wait_time_ns,
        ]
    }

    pub fn from_array(x: &[f64]) -> Result<Self> {
        match x {
            [p, d, w, t] => Ok(Self {
                laser_power_mw: *p,
                laser_duration_ns: *d,
                readout_window_ns: *w,
                wait_time_ns: *t,
            }),
            _ => Err(invalid("readout_params", format!("expected 4 values, got {}", x.len()))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let within = |v: f64, (lo, hi): (f64, f64)| v.is_finite() && v >= lo - 1e-9 && v <= hi + 1e-9;
        if !within(self.laser_power_mw, Self::POWER_MW) {
            return Err(invalid("laser_power_mw", format!("{} outside [2, 40]", self.laser_power_mw)));
        }
        if !within(self.laser_duration_ns, Self::DURATION_NS) {
            return Err(invalid(
                "laser_duration_ns",
                format!("{} outside [300, 2000]", self.laser_duration_ns),
            ));
        }
        let d = self.laser_duration_ns;
        let window = (Self::WINDOW_FRACTION.0 * d, Self::WINDOW_FRACTION.1 * d);
        if !within(self.readout_window_ns, window) {
            return Err(invalid(
                "readout_window_ns",
                format!("{} outside [0.25, 0.75] × laser duration", self.readout_window_ns),
            ));
        }
        if !within(self.wait_time_ns, Self::WAIT_NS) {
            return Err(invalid("wait_time_ns", format!("{} outside [0, 1000]", self.wait_time_ns)));
        }
        Ok(())
    }
}

/// Expected counts per shot in the two windows of one laser pulse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowYield {
    pub readout: f64,
    pub saturation: f64,
}

impl WindowYield {
    fn mix(a: WindowYield, b: WindowYield, weight_b: f64) -> WindowYield {
        WindowYield {
            readout: (1.0 - weight_b) * a.readout + weight_b * b.readout,
            saturation: (1.0 - weight_b) * a.saturation + weight_b * b.saturation,
        }
    }
}

/// Per-shot expectations for the `m_s = 0` readout and for a fully inverted spin.
///
/// Counts are linear in the initial populations, so a partial inversion with
/// transfer probability `p` reads out as the `p`-weighted mixture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReadoutResponse {
    pub spin0: WindowYield,
    pub spin1: WindowYield,
}

impl ReadoutResponse {
    pub fn with_transfer(&self, transfer: f64) -> WindowYield {
        WindowYield::mix(self.spin0, self.spin1, transfer)
    }
}

/// Periodic steady state of the `laser → wait` cycle, sampled just before the
/// microwave slot.
pub fn polarized_state(rates: &NvRates, params: &ReadoutParams) -> Result<Populations> {
    let laser = RatePropagator::new(
        rates,
        Laser::On {
            power_mw: params.laser_power_mw,
        },
        params.laser_duration_ns * 1e-9,
    )?;
    let dark = RatePropagator::new(rates, Laser::Off, params.wait_time_ns * 1e-9)?;
    let mut p = THERMAL;
    for _ in 0..500 {
        let next = dark.apply(&laser.apply(&p).populations).populations;
        let delta: f64 = next.iter().zip(&p).map(|(a, b)| (a - b).abs()).sum();
        p = next;
        if delta < 1e-14 {
            break;
        }
    }
    Ok(p)
}

/// Expected window counts per shot for the two-shot readout scheme.
pub fn readout_response(rates: &NvRates, params: &ReadoutParams) -> Result<ReadoutResponse> {
    rates.validate()?;
    params.validate()?;
    let p0 = polarized_state(rates, params)?;
    let mut p1 = p0;
    p1.swap(G0, G1);
    let laser = Laser::On {
        power_mw: params.laser_power_mw,
    };
    let window = params.readout_window_ns * 1e-9;
    let rest = (params.laser_duration_ns - params.readout_window_ns).max(0.0) * 1e-9;
    let first = RatePropagator::new(rates, laser, window)?;
    let second = RatePropagator::new(rates, laser, rest)?;
    let windows = |p: &Populations| {
        let a = first.apply(p);
        let b = second.apply(&a.populations);
        WindowYield {
            readout: a.photons + rates.background_rate * window,
            saturation: b.photons + rates.background_rate * rest,
        }
    };
    Ok(ReadoutResponse {
        spin0: windows(&p0),
        spin1: windows(&p1),
    })
}

/// Photon counts of one repetition (a block of shots) of the two-shot scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepetitionCounts {
    pub r0: u64,
    pub r1: u64,
    pub s0: u64,
    pub s1: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadoutCounts {
    pub shots_per_repetition: u64,
    pub repetitions: Vec<RepetitionCounts>,
}

impl ReadoutCounts {
    pub fn n(&self) -> usize {
        self.repetitions.len()
    }

    pub fn totals(&self) -> RepetitionCounts {
        self.repetitions.iter().fold(
            RepetitionCounts {
                r0: 0,
                r1: 0,
                s0: 0,
                s1: 0,
            },
            |acc, r| RepetitionCounts {
                r0: acc.r0 + r.r0,
                r1: acc.r1 + r.r1,
                s0: acc.s0 + r.s0,
                s1: acc.s1 + r.s1,
            },
        )
    }
}

/// Poisson draw that accepts a zero mean.
pub fn poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).map(|d| d.sample(rng) as u64).unwrap_or(0)
}

/// Draw counts for `repetitions` blocks of `shots_per_repetition` shots each.
pub fn sample_counts<R: Rng + ?Sized>(
    response: &ReadoutResponse,
    transfer: f64,
    repetitions: usize,
    shots_per_repetition: u64,
    rng: &mut R,
) -> Result<ReadoutCounts> {
    if repetitions == 0 || shots_per_repetition == 0 {
        return Err(invalid("repetitions", "need at least one repetition and one shot"));
    }
    if !(0.0..=1.0).contains(&transfer) {
        return Err(invalid("transfer", format!("{transfer} not in [0, 1]")));
    }
    let shots = shots_per_repetition as f64;
    let bright = response.spin0;
    let flipped = response.with_transfer(transfer);
    let repetitions = (0..repetitions)
        .map(|_| RepetitionCounts {
            r0: poisson(shots * bright.readout, rng),
            s0: poisson(shots * bright.saturation, rng),
            r1: poisson(shots * flipped.readout, rng),
            s1: poisson(shots * flipped.saturation, rng),
        })
        .collect();
    Ok(ReadoutCounts {
        shots_per_repetition,
        repetitions,
    })
}

/// Simulate the two-shot readout; `transfer` is the inversion pulse's
/// `|0⟩ → |1⟩` probability.
pub fn simulate_readout<R: Rng + ?Sized>(
    rates: &NvRates,
    params: &ReadoutParams,
    transfer: f64,
    repetitions: usize,
    shots_per_repetition: u64,
    rng: &mut R,
) -> Result<ReadoutCounts> {
    let response = readout_response(rates, params)?;
    sample_counts(&response, transfer, repetitions, shots_per_repetition, rng)
}

/// `C = (R0 − R1)/(R0 + R1)`.
pub fn contrast(r0: f64, r1: f64) -> Result<f64> {
    let total = r0 + r1;
    if !(total > 0.0) {
        return Err(Error::ZeroCounts);
    }
    Ok((r0 - r1) / total)
}

pub fn counts_contrast(counts: &ReadoutCounts) -> Result<f64> {
    let t = counts.totals();
    contrast(t.r0 as f64, t.r1 as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReadoutNoise {
    /// `σ_R = √(1 + 2(R0+R1)/(R0−R1)²)`.
    pub sigma_r: f64,
    /// `1/σ_R`.
    pub fidelity: f64,
    /// `1/√(1 + 1/(C̄²R̄))` with `R̄ = (R0+R1)/2`.
    pub fidelity_from_contrast: f64,
}

pub fn readout_noise(r0: f64, r1: f64) -> Result<ReadoutNoise> {
    let diff = r0 - r1;
    if diff == 0.0 {
        return Err(Error::InfiniteNoise);
    }
    let c = contrast(r0, r1)?;
    let sigma_r = (1.0 + 2.0 * (r0 + r1) / (diff * diff)).sqrt();
    Ok(ReadoutNoise {
        sigma_r,
        fidelity: 1.0 / sigma_r,
        fidelity_from_contrast: fidelity_from_contrast(c, 0.5 * (r0 + r1)),
    })
}

/// `𝓕 = 1/√(1 + 1/(C̄²R̄))`.
pub fn fidelity_from_contrast(mean_contrast: f64, mean_counts: f64) -> f64 {
    1.0 / (1.0 + 1.0 / (mean_contrast * mean_contrast * mean_counts)).sqrt()
}

/// How the per-repetition saturation difference is normalized inside the
/// variance term of the readout FoM.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SaturationNormalization {
    /// `|S0_r − S1_r| / mean_r(S0 + S1)`.
    #[default]
    MeanOfSums,
    /// `|S0_r − S1_r| / (S0_r + S1_r)`, repetitions with no counts skipped.
    PerRepetition,
}

/// `FoM_RO = 1 − C̄·[1 − var(d)]`, minimized. `d` is the normalized saturation
/// difference of each repetition and the variance is the unbiased sample
/// variance over repetitions.
pub fn fom_readout(counts: &ReadoutCounts, normalization: SaturationNormalization) -> Result<f64> {
    let n = counts.n();
    if n < 2 {
        return Err(invalid("repetitions", "readout FoM needs at least two repetitions"));
    }
    let t = counts.totals();
    if t.s0 + t.s1 == 0 {
        return Err(Error::ZeroCounts);
    }
    let c = contrast(t.r0 as f64, t.r1 as f64)?;
    let diffs: Vec<f64> = match normalization {
        SaturationNormalization::MeanOfSums => {
            let mean_sum = (t.s0 + t.s1) as f64 / n as f64;
            counts
                .repetitions
                .iter()
                .map(|r| (r.s0 as f64 - r.s1 as f64).abs() / mean_sum)
                .collect()
        }
        SaturationNormalization::PerRepetition => counts
            .repetitions
            .iter()
            .filter(|r| r.s0 + r.s1 > 0)
            .map(|r| (r.s0 as f64 - r.s1 as f64).abs() / (r.s0 + r.s1) as f64)
            .collect(),
    };
    Ok(1.0 - c * (1.0 - sample_variance(&diffs)))
}

fn sample_variance(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
}
