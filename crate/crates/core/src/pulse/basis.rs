use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Default offset factor `ε` for sigmoid superparameters.
pub const DEFAULT_OFFSET_FACTOR: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisKind {
    Fourier,
    Sigmoid,
}

/// A random basis family together with the admissible superparameter range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Basis {
    /// `sin(ωt)` and `cos(ωt)` with `ω ∈ [omega_min, omega_max]` (rad/s).
    Fourier { omega_min: f64, omega_max: f64 },
    /// Gaussian-integral steps of width `width` (s) with offsets in
    /// `[ε·width, duration − ε·width]`.
    Sigmoid {
        width: f64,
        offset_factor: f64,
        duration: f64,
    },
}

impl Basis {
    /// Fourier basis up to ten oscillations across the pulse.
    pub fn fourier_default(duration: f64) -> Self {
        Basis::Fourier {
            omega_min: 0.0,
            omega_max: 2.0 * std::f64::consts::PI * 10.0 / duration,
        }
    }

    /// Sigmoid basis with `σ = t_p/20` and `ε = 4`.
    pub fn sigmoid_default(duration: f64) -> Self {
        Basis::Sigmoid {
            width: duration / 20.0,
            offset_factor: DEFAULT_OFFSET_FACTOR,
            duration,
        }
    }

    pub fn kind(&self) -> BasisKind {
        match self {
            Basis::Fourier { .. } => BasisKind::Fourier,
            Basis::Sigmoid { .. } => BasisKind::Sigmoid,
        }
    }

    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            Basis::Fourier {
                omega_min,
                omega_max,
            } => (omega_min, omega_max),
            Basis::Sigmoid {
                width,
                offset_factor,
                duration,
            } => (offset_factor * width, duration - offset_factor * width),
        }
    }

    /// Copy of the basis retargeted to a pulse of length `duration`.
    pub fn for_duration(&self, duration: f64) -> Self {
        match *self {
            Basis::Sigmoid {
                width,
                offset_factor,
                ..
            } => Basis::Sigmoid {
                width,
                offset_factor,
                duration,
            },
            b => b,
        }
    }

    fn validate(&self) -> Result<()> {
        let (lo, hi) = self.bounds();
        if !lo.is_finite() || !hi.is_finite() {
            return Err(invalid("basis", "bounds must be finite"));
        }
        match *self {
            Basis::Fourier { omega_min, .. } if omega_min < 0.0 => {
                return Err(invalid("omega_min", "must be non-negative"))
            }
            Basis::Sigmoid { width, .. } if !(width > 0.0) => {
                return Err(invalid("width", "sigmoid width must be positive"))
            }
            _ => {}
        }
        if !(lo < hi) {
            return Err(Error::EmptyInterval { lo, hi });
        }
        Ok(())
    }
}

/// One basis function `f^i(ω; t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasisElement {
    pub kind: BasisKind,
    /// Frequency (rad/s) for Fourier, offset (s) for Sigmoid.
    pub superparameter: f64,
    /// 1 = sin, 2 = cos for Fourier; always 1 for Sigmoid.
    pub sub_index: u8,
    /// Sigmoid rise width σ (s); zero for Fourier.
    pub width: f64,
}

impl BasisElement {
    pub fn eval(&self, t: f64) -> f64 {
        match (self.kind, self.sub_index) {
            (BasisKind::Fourier, 1) => (self.superparameter * t).sin(),
            (BasisKind::Fourier, _) => (self.superparameter * t).cos(),
            (BasisKind::Sigmoid, _) => sigmoid(self.superparameter, self.width, t),
        }
    }
}

/// `(1/(√(2π)σ)) ∫₀ᵗ exp(−½((τ−ω)/σ)²) dτ = Φ((t−ω)/σ) − Φ(−ω/σ)`.
pub fn sigmoid(offset: f64, width: f64, t: f64) -> f64 {
    normal_cdf((t - offset) / width) - normal_cdf(-offset / width)
}

/// Standard normal CDF via `erfc`, accurate in both tails.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Draw `n_set` superparameters uniformly from the basis range.
///
/// Fourier returns `2·n_set` elements (sin and cos per frequency). Sigmoid
/// returns the anchored element at `ω = εσ` followed by `n_set` random offsets.
pub fn sample_basis(basis: &Basis, n_set: usize, seed: u64) -> Result<Vec<BasisElement>> {
    basis.validate()?;
    if n_set == 0 {
        return Err(invalid("n_set", "must be at least 1"));
    }
    let (lo, hi) = basis.bounds();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    match *basis {
        Basis::Fourier { .. } => {
            for _ in 0..n_set {
                let omega = rng.random_range(lo..=hi);
                for sub_index in [1, 2] {
                    out.push(BasisElement {
                        kind: BasisKind::Fourier,
                        superparameter: omega,
                        sub_index,
                        width: 0.0,
                    });
                }
            }
        }
        Basis::Sigmoid { width, .. } => {
            let element = |offset| BasisElement {
                kind: BasisKind::Sigmoid,
                superparameter: offset,
                sub_index: 1,
                width,
            };
            out.push(element(lo));
            for _ in 0..n_set {
                out.push(element(rng.random_range(lo..=hi)));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fourier_is_seeded_and_bounded() {
        let b = Basis::fourier_default(1e-6);
        let a = sample_basis(&b, 3, 17).unwrap();
        assert_eq!(a, sample_basis(&b, 3, 17).unwrap());
        assert_ne!(a, sample_basis(&b, 3, 18).unwrap());
        assert_eq!(a.len(), 6);
        let (lo, hi) = b.bounds();
        assert!(a.iter().all(|e| e.superparameter >= lo && e.superparameter <= hi));
        assert_eq!(a[0].superparameter, a[1].superparameter);
        assert_eq!((a[0].sub_index, a[1].sub_index), (1, 2));
    }

    #[test]
    fn sigmoid_starts_with_anchor() {
        let b = Basis::sigmoid_default(200e-9);
        for n in 1..5 {
            let e = sample_basis(&b, n, n as u64).unwrap();
            assert_eq!(e.len(), n + 1);
            assert_eq!(e[0].superparameter, 4.0 * 10e-9);
        }
    }

    #[test]
    fn degenerate_interval_is_rejected() {
        let b = Basis::Fourier {
            omega_min: 5.0,
            omega_max: 5.0,
        };
        assert!(matches!(sample_basis(&b, 2, 0), Err(Error::EmptyInterval { .. })));
        let narrow = Basis::Sigmoid {
            width: 1.0,
            offset_factor: 4.0,
            duration: 8.0,
        };
        assert!(sample_basis(&narrow, 1, 0).is_err());
    }

    #[test]
    fn sigmoid_is_monotone_and_starts_at_zero() {
        let (w, off) = (10e-9, 60e-9);
        assert_eq!(sigmoid(off, w, 0.0), 0.0);
        let mut prev = 0.0;
        for k in 0..=1000 {
            let v = sigmoid(off, w, k as f64 * 0.2e-9);
            assert!(v >= prev);
            prev = v;
        }
        assert!((sigmoid(off, w, off) - 0.5).abs() < 1e-8);
    }

    #[test]
    fn fourier_pair_is_orthogonal_over_a_period() {
        let omega = 2.0 * std::f64::consts::PI * 5e6;
        let period = 2.0 * std::f64::consts::PI / omega;
        let n = 4000;
        let dt = period / n as f64;
        let mk = |sub_index| BasisElement {
            kind: BasisKind::Fourier,
            superparameter: omega,
            sub_index,
            width: 0.0,
        };
        let (s, c) = (mk(1), mk(2));
        let overlap: f64 = (0..n).map(|k| {
            let t = (k as f64 + 0.5) * dt;
            s.eval(t) * c.eval(t) * dt
        }).sum();
        assert!(overlap.abs() < 1e-6 * period);
    }
}
