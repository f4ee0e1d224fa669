use serde::{Deserialize, Serialize};

use super::basis::{BasisElement, BasisKind};
use crate::error::{invalid, Error, Result};

/// Unrestricted two-channel waveform on an endpoint-inclusive grid
/// `t_k = k·t_p/(n−1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waveform {
    pub channels: [Vec<f64>; 2],
    pub duration: f64,
}

impl Waveform {
    pub fn new(u1: Vec<f64>, u2: Vec<f64>, duration: f64) -> Result<Self> {
        if u1.len() != u2.len() || u1.len() < 2 {
            return Err(invalid("waveform", "channels need equal length ≥ 2"));
        }
        if !(duration > 0.0) {
            return Err(invalid("duration", "must be positive"));
        }
        Ok(Self {
            channels: [u1, u2],
            duration,
        })
    }

    pub fn constant(u1: f64, u2: f64, duration: f64, n: usize) -> Result<Self> {
        Self::new(vec![u1; n], vec![u2; n], duration)
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels[0].is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        self.duration * k as f64 / (self.len() - 1) as f64
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(|k| self.time(k))
    }
}

/// `u^i(t) = u₀^i(t) + Σ_n A_n f_n(t)` for each active channel.
///
/// Each channel owns its element list. Coefficients are laid out channel by
/// channel in element order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseExpansion {
    pub initial_guess: Waveform,
    pub elements: [Vec<BasisElement>; 2],
}

impl PulseExpansion {
    pub fn new(initial_guess: Waveform, elements: [Vec<BasisElement>; 2]) -> Self {
        Self {
            initial_guess,
            elements,
        }
    }

    pub fn coefficient_count(&self) -> usize {
        self.elements[0].len() + self.elements[1].len()
    }

    /// Number of distinct superparameters across both channels.
    pub fn n_set(&self) -> usize {
        self.elements
            .iter()
            .flatten()
            .filter(|e| e.sub_index == 1)
            .count()
    }
}

/// Sample the expansion on the guess grid.
///
/// Sigmoid channels get a closing element at `t_p − εσ` weighted by `−Σ A_n`,
/// which returns the correction to zero at `t_p`.
pub fn evaluate_expansion(exp: &PulseExpansion, coefficients: &[f64]) -> Result<Waveform> {
    let expected = exp.coefficient_count();
    if coefficients.len() != expected {
        return Err(Error::CoefficientMismatch {
            expected,
            got: coefficients.len(),
        });
    }
    if coefficients.iter().any(|c| !c.is_finite()) {
        return Err(invalid("coefficients", "must be finite"));
    }
    let guess = &exp.initial_guess;
    let times: Vec<f64> = guess.times().collect();
    let mut out = guess.clone();
    let mut offset = 0;
    for (ch, elements) in exp.elements.iter().enumerate() {
        let coeffs = &coefficients[offset..offset + elements.len()];
        offset += elements.len();
        let samples = &mut out.channels[ch];
        for (e, &a) in elements.iter().zip(coeffs) {
            if a == 0.0 {
                continue;
            }
            for (s, &t) in samples.iter_mut().zip(&times) {
                *s += a * e.eval(t);
            }
        }
        if let Some(first) = elements.first().filter(|e| e.kind == BasisKind::Sigmoid) {
            let total: f64 = coeffs.iter().sum();
            if total != 0.0 {
                let closing = BasisElement {
                    superparameter: guess.duration - first.superparameter,
                    ..*first
                };
                for (s, &t) in samples.iter_mut().zip(&times) {
                    *s -= total * closing.eval(t);
                }
            }
        }
    }
    Ok(out)
}
