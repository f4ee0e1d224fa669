use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::nelder_mead::{nelder_mead_in, Measured, NelderMeadConfig, OptimizerState, SearchSpace, Status};
use crate::error::{invalid, Result};
use crate::pulse::{
    apply_restriction, evaluate_expansion, sample_basis, Basis, BasisElement, PulseExpansion,
    RestrictionPolicy, Waveform,
};
use crate::spin::ControlPulse;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcrabConfig {
    /// Superparameters drawn per channel and superiteration.
    pub n_set: usize,
    pub max_superiterations: usize,
    pub basis: Basis,
    /// Which of `(u1, u2)` receive basis elements.
    pub channels: [bool; 2],
    pub restriction: RestrictionPolicy,
    pub nelder_mead: NelderMeadConfig,
    /// `|A_n|` bound (rad/s).
    pub coefficient_bound: f64,
    /// Initial simplex edge in coefficient space (rad/s); 10% of the box when unset.
    #[serde(default)]
    pub coefficient_step: Option<f64>,
    /// Stop when a superiteration improves the best FoM by less than this.
    pub tol_super: f64,
    pub seed: u64,
}

impl DcrabConfig {
    /// Defaults for pulses limited to `rabi_max` on both channels.
    pub fn new(basis: Basis, rabi_max: f64, seed: u64) -> Self {
        Self {
            n_set: 3,
            max_superiterations: 10,
            basis,
            channels: [true, true],
            restriction: RestrictionPolicy::cut_off(rabi_max),
            nelder_mead: NelderMeadConfig::default(),
            coefficient_bound: rabi_max,
            coefficient_step: None,
            tol_super: 1e-3,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_set == 0 {
            return Err(invalid("n_set", "must be at least 1"));
        }
        if self.max_superiterations == 0 {
            return Err(invalid("max_superiterations", "must be at least 1"));
        }
        if !self.channels.iter().any(|&c| c) {
            return Err(invalid("channels", "at least one channel must be optimized"));
        }
        if !(self.coefficient_bound > 0.0) {
            return Err(invalid("coefficient_bound", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuperiterationRecord {
    pub index: usize,
    pub seed: u64,
    pub elements: [Vec<BasisElement>; 2],
    /// FoM of the carried-over pulse (zero coefficients).
    pub start_fom: f64,
    pub best_fom: f64,
    pub best_coefficients: Vec<f64>,
    pub evaluations: usize,
    pub status: Status,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcrabResult {
    pub best_fom: f64,
    pub best_std_error: f64,
    /// Unrestricted waveform of the best pulse; seeds the next run.
    pub best_waveform: Waveform,
    pub best_pulse: ControlPulse,
    pub superiterations: Vec<SuperiterationRecord>,
    /// Per-superiteration optimizer states, evaluation history included.
    pub states: Vec<OptimizerState>,
}

impl DcrabResult {
    /// Best FoM at the end of each superiteration.
    pub fn superiteration_trace(&self) -> Vec<f64> {
        self.superiterations.iter().map(|s| s.best_fom).collect()
    }

    pub fn evaluations(&self) -> usize {
        self.states.iter().map(|s| s.evaluations).sum()
    }
}

/// Seed for the basis draw of channel `channel` in superiteration `index`.
fn basis_seed(master: u64, index: usize, channel: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream((index * 2 + channel) as u64 + 1);
    rng.next_u64()
}

/// dCRAB: repeated Nelder–Mead searches over freshly drawn random bases, each
/// started from the best pulse so far.
///
/// `fom` receives restricted pulses only. Every superiteration opens with the
/// carried-over waveform (all coefficients zero), so the best FoM never
/// increases across superiteration boundaries in noiseless runs.
pub fn dcrab_optimize<F>(
    config: &DcrabConfig,
    initial_guess: &Waveform,
    fom: &mut F,
) -> Result<DcrabResult>
where
    F: FnMut(&ControlPulse) -> Result<Measured>,
{
    config.validate()?;
    let basis = config.basis.for_duration(initial_guess.duration);
    let mut guess = initial_guess.clone();
    let mut best_pulse = apply_restriction(&config.restriction, &guess)?;
    let mut best_fom = f64::INFINITY;
    let mut best_std_error = 0.0;
    let mut records = Vec::new();
    let mut states = Vec::new();

    for index in 0..config.max_superiterations {
        let mut elements: [Vec<BasisElement>; 2] = [Vec::new(), Vec::new()];
        for (ch, active) in config.channels.iter().enumerate() {
            if *active {
                elements[ch] = sample_basis(&basis, config.n_set, basis_seed(config.seed, index, ch))?;
            }
        }
        let expansion = PulseExpansion::new(guess.clone(), elements.clone());
        let dim = expansion.coefficient_count();
        let space = SearchSpace::symmetric(dim, config.coefficient_bound)?;
        let mut nm = config.nelder_mead.clone();
        if let Some(step) = config.coefficient_step {
            nm.initial_step = Some(vec![step; dim]);
        }
        let mut objective = |a: &[f64]| {
            let raw = evaluate_expansion(&expansion, a)?;
            let pulse = apply_restriction(&config.restriction, &raw)?;
            fom(&pulse)
        };
        let state = nelder_mead_in(&space, &vec![0.0; dim], &nm, &mut objective, index)?;
        let start_fom = state.history.first().map_or(f64::NAN, |h| h.fom);
        let previous = best_fom;
        if state.best_fom < best_fom || index == 0 {
            best_fom = state.best_fom;
            best_std_error = state.best_std_error;
            guess = evaluate_expansion(&expansion, &state.best_x)?;
            best_pulse = apply_restriction(&config.restriction, &guess)?;
        }
        records.push(SuperiterationRecord {
            index,
            seed: basis_seed(config.seed, index, 0),
            elements,
            start_fom,
            best_fom: state.best_fom,
            best_coefficients: state.best_x.clone(),
            evaluations: state.evaluations,
            status: state.status.clone(),
        });
        let aborted = matches!(state.status, Status::Aborted(_));
        states.push(state);
        if aborted {
            break;
        }
        let start = if index == 0 { start_fom } else { previous };
        if start - best_fom < config.tol_super {
            break;
        }
    }

    Ok(DcrabResult {
        best_fom,
        best_std_error,
        best_waveform: guess,
        best_pulse,
        superiterations: records,
        states,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spin::{propagate, RwaHamiltonianParams};
    use std::f64::consts::{PI, TAU};

    const RABI: f64 = TAU * 10e6;

    fn inversion_fom(pulse: &ControlPulse) -> Result<Measured> {
        let h = RwaHamiltonianParams::new(0.0, RABI)?;
        Ok(Measured::exact(1.0 - propagate(&h, pulse, 1.0)?.transfer()))
    }

    #[test]
    fn fixed_point_stays_put() {
        let duration = PI / RABI;
        let guess = Waveform::constant(RABI, 0.0, duration, 101).unwrap();
        let config = DcrabConfig {
            max_superiterations: 3,
            tol_super: 0.0,
            ..DcrabConfig::new(Basis::fourier_default(duration), RABI, 1)
        };
        let r = dcrab_optimize(&config, &guess, &mut inversion_fom).unwrap();
        let start = r.superiterations[0].start_fom;
        assert!(start < 1e-12);
        assert!(r.best_fom <= start);
        for s in &r.superiterations {
            assert!((s.start_fom - start).abs() < 1e-12);
        }
    }

    #[test]
    fn carryover_reproduces_previous_best() {
        let duration = 1.3 * PI / RABI;
        let guess = Waveform::constant(0.7 * RABI, 0.0, duration, 101).unwrap();
        let config = DcrabConfig {
            max_superiterations: 3,
            tol_super: -1.0,
            ..DcrabConfig::new(Basis::sigmoid_default(duration), RABI, 9)
        };
        let r = dcrab_optimize(&config, &guess, &mut inversion_fom).unwrap();
        assert_eq!(r.superiterations.len(), 3);
        for w in r.superiterations.windows(2) {
            assert_eq!(w[1].start_fom, w[0].best_fom);
        }
        let t = r.superiteration_trace();
        assert!(t.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn seeded_runs_are_identical() {
        let duration = PI / RABI;
        let guess = Waveform::constant(0.8 * RABI, 0.0, duration, 51).unwrap();
        let config = DcrabConfig {
            max_superiterations: 2,
            ..DcrabConfig::new(Basis::fourier_default(duration), RABI, 4)
        };
        let a = dcrab_optimize(&config, &guess, &mut inversion_fom).unwrap();
        let b = dcrab_optimize(&config, &guess, &mut inversion_fom).unwrap();
        assert_eq!(a, b);
    }
}
