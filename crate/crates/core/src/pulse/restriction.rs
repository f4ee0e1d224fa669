use serde::{Deserialize, Serialize};

use super::expansion::Waveform;
use crate::error::{invalid, Result};
use crate::spin::ControlPulse;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RestrictionMode {
    /// Clamp every sample into `[−A_max, A_max]`.
    CutOff,
    /// Affine-map into the limits, then taper with a flat-top window.
    BandwidthLimited,
}

/// Flat-top window with Gaussian shoulders, offset so it vanishes at both ends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlatTopWindow {
    /// Fraction of the pulse held at unity.
    pub flat_fraction: f64,
    /// Shoulder standard deviation as a fraction of the pulse length.
    pub edge_sigma_fraction: f64,
}

impl Default for FlatTopWindow {
    fn default() -> Self {
        Self {
            flat_fraction: 0.8,
            edge_sigma_fraction: 0.05,
        }
    }
}

impl FlatTopWindow {
    /// Window values on an `n`-point endpoint-inclusive grid.
    pub fn samples(&self, n: usize) -> Vec<f64> {
        let edge = 0.5 * (1.0 - self.flat_fraction);
        let s2 = 2.0 * self.edge_sigma_fraction * self.edge_sigma_fraction;
        let floor = (-edge * edge / s2).exp();
        let last = (n - 1) as f64;
        (0..n)
            .map(|k| {
                let d = k.min(n - 1 - k) as f64 / last;
                if d >= edge {
                    1.0
                } else {
                    let g = (-(d - edge) * (d - edge) / s2).exp();
                    ((g - floor) / (1.0 - floor)).max(0.0)
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RestrictionPolicy {
    pub mode: RestrictionMode,
    /// Per-channel amplitude limit `A_max` (rad/s).
    pub amplitude_limit: f64,
    #[serde(default)]
    pub window: FlatTopWindow,
    /// Optional cap on `√(u1²+u2²)`, applied radially after the per-channel step.
    #[serde(default)]
    pub max_magnitude: Option<f64>,
}

impl RestrictionPolicy {
    pub fn cut_off(amplitude_limit: f64) -> Self {
        Self {
            mode: RestrictionMode::CutOff,
            amplitude_limit,
            window: FlatTopWindow::default(),
            max_magnitude: Some(amplitude_limit),
        }
    }

    pub fn bandwidth_limited(amplitude_limit: f64) -> Self {
        Self {
            mode: RestrictionMode::BandwidthLimited,
            ..Self::cut_off(amplitude_limit)
        }
    }
}

fn fit_into_limits(channel: &mut [f64], limit: f64) {
    let (lo, hi) = channel
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if lo >= -limit && hi <= limit {
        return;
    }
    if hi - lo <= 0.0 {
        let v = limit.copysign(lo);
        channel.iter_mut().for_each(|s| *s = v);
        return;
    }
    let scale = 2.0 * limit / (hi - lo);
    for s in channel.iter_mut() {
        *s = (-limit + (*s - lo) * scale).clamp(-limit, limit);
    }
}

/// Force a raw waveform into the hardware limits and hand back a pulse ready
/// for propagation. Sample `k` of the output is held for `t_p/n`.
///
/// Limits are enforced per channel.
pub fn apply_restriction(policy: &RestrictionPolicy, raw: &Waveform) -> Result<ControlPulse> {
    let limit = policy.amplitude_limit;
    if !(limit > 0.0) || !limit.is_finite() {
        return Err(invalid("amplitude_limit", "must be positive"));
    }
    let mut channels = raw.channels.clone();
    match policy.mode {
        RestrictionMode::CutOff => {
            for ch in channels.iter_mut() {
                ch.iter_mut().for_each(|s| *s = s.clamp(-limit, limit));
            }
        }
        RestrictionMode::BandwidthLimited => {
            let window = policy.window.samples(raw.len());
            for ch in channels.iter_mut() {
                fit_into_limits(ch, limit);
                ch.iter_mut().zip(&window).for_each(|(s, w)| *s *= w);
            }
        }
    }
    let mut samples: Vec<[f64; 2]> = channels[0]
        .iter()
        .zip(&channels[1])
        .map(|(&a, &b)| [a, b])
        .collect();
    if let Some(cap) = policy.max_magnitude {
        for s in samples.iter_mut() {
            let m = s[0].hypot(s[1]);
            if m > cap * (1.0 + 1e-12) {
                let f = cap / m;
                *s = [s[0] * f, s[1] * f];
            }
        }
    }
    ControlPulse::new(samples, raw.duration / raw.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const A: f64 = 1e7;

    #[test]
    fn cut_off_keeps_pulses_inside_limits() {
        let raw = Waveform::new(vec![0.5 * A, -0.3 * A, A], vec![0.0; 3], 1e-7).unwrap();
        let p = apply_restriction(&RestrictionPolicy::cut_off(A), &raw).unwrap();
        assert_eq!(p.samples(), &[[0.5 * A, 0.0], [-0.3 * A, 0.0], [A, 0.0]]);
        assert_eq!(p.dt(), 1e-7 / 3.0);
    }

    #[test]
    fn cut_off_clamps_constant() {
        let raw = Waveform::constant(2.0 * A, 0.0, 1e-7, 10).unwrap();
        let p = apply_restriction(&RestrictionPolicy::cut_off(A), &raw).unwrap();
        assert!(p.samples().iter().all(|s| s[0] == A));
    }

    #[test]
    fn bandwidth_limited_maps_ramp_onto_limits() {
        let n = 201;
        let ramp: Vec<f64> = (0..n).map(|k| -2.0 * A + 4.0 * A * k as f64 / (n - 1) as f64).collect();
        let mut mapped = ramp.clone();
        fit_into_limits(&mut mapped, A);
        // hand-computed: v ↦ −A + (v + 2A)·(2A / 4A) = v / 2
        for (m, r) in mapped.iter().zip(&ramp) {
            assert!((m - r / 2.0).abs() < 1e-6);
        }
        assert_eq!(mapped[0], -A);
        assert_eq!(mapped[n - 1], A);
        let raw = Waveform::new(ramp, vec![0.0; n], 1e-7).unwrap();
        let policy = RestrictionPolicy {
            max_magnitude: None,
            ..RestrictionPolicy::bandwidth_limited(A)
        };
        let p = apply_restriction(&policy, &raw).unwrap();
        assert_eq!(p.samples()[0][0], 0.0);
        assert_eq!(p.samples()[n - 1][0], 0.0);
        assert!((p.samples()[n / 2][0]).abs() < 1e-6);
        assert!((p.samples()[180][0] - mapped[180]).abs() < 1e-6);
    }

    #[test]
    fn window_shape() {
        let w = FlatTopWindow::default().samples(1001);
        assert_eq!(w[0], 0.0);
        assert_eq!(w[1000], 0.0);
        assert!(w[100..=900].iter().all(|&v| v == 1.0));
        assert!(w[..100].windows(2).all(|p| p[1] >= p[0]));
    }

    #[test]
    fn magnitude_cap_is_radial() {
        let raw = Waveform::constant(A, A, 1e-7, 5).unwrap();
        let p = apply_restriction(&RestrictionPolicy::cut_off(A), &raw).unwrap();
        for s in p.samples() {
            assert!((s[0].hypot(s[1]) - A).abs() < 1e-6);
            assert!((s[0] - s[1]).abs() < 1e-9);
        }
    }

    fn waveform() -> impl Strategy<Value = Waveform> {
        (3usize..80).prop_flat_map(|n| {
            (
                prop::collection::vec(-5.0 * A..5.0 * A, n),
                prop::collection::vec(-5.0 * A..5.0 * A, n),
            )
                .prop_map(|(a, b)| Waveform::new(a, b, 2e-7).unwrap())
        })
    }

    proptest! {
        #[test]
        fn cut_off_is_idempotent(raw in waveform()) {
            let policy = RestrictionPolicy::cut_off(A);
            let once = apply_restriction(&policy, &raw).unwrap();
            let back = Waveform::new(
                once.samples().iter().map(|s| s[0]).collect(),
                once.samples().iter().map(|s| s[1]).collect(),
                raw.duration,
            ).unwrap();
            let twice = apply_restriction(&policy, &back).unwrap();
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn bandwidth_limited_zero_ends_and_bounded(raw in waveform()) {
            let p = apply_restriction(&RestrictionPolicy::bandwidth_limited(A), &raw).unwrap();
            let s = p.samples();
            prop_assert_eq!(s[0], [0.0, 0.0]);
            prop_assert_eq!(s[s.len() - 1], [0.0, 0.0]);
            for v in s {
                prop_assert!(v[0].abs() <= A && v[1].abs() <= A);
                prop_assert!(v[0].hypot(v[1]) <= A * (1.0 + 1e-12));
            }
        }
    }
}
