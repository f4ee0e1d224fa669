use std::f64::consts::{FRAC_PI_2, PI, TAU};

use num_complex::Complex64;
use nvqoc::model::{HyperfineModel, NvModel};
use nvqoc::protocols::*;
use nvqoc::sensitivity::{fit_ramsey, FitConfig};
use nvqoc::spin::{ControlPulse, Unitary2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const RABI: f64 = TAU * 10e6;

/// Rectangular x pulse of length `t` at detuning `d`, from the generalized
/// Rabi formula.
fn rabi_unitary(rabi: f64, d: f64, t: f64) -> [[Complex64; 2]; 2] {
    let w = rabi.hypot(d);
    let (c, s) = ((w * t / 2.0).cos(), (w * t / 2.0).sin());
    let i = Complex64::i();
    [
        [c - i * s * d / w, -i * s * rabi / w],
        [-i * s * rabi / w, c + i * s * d / w],
    ]
}

fn mul(a: [[Complex64; 2]; 2], b: [[Complex64; 2]; 2]) -> [[Complex64; 2]; 2] {
    let mut o = [[Complex64::new(0.0, 0.0); 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            o[r][c] = a[r][0] * b[0][c] + a[r][1] * b[1][c];
        }
    }
    o
}

#[test]
fn spectrum_follows_detuned_rabi_lineshape() {
    let model = NvModel::ideal(RABI);
    let pulse = model.pi_reference();
    let t = pulse.duration();
    let detunings: Vec<f64> = (0..81).map(|k| TAU * (-20e6 + 0.5e6 * k as f64)).collect();
    let s = podmr_spectrum(&pulse, &AmplitudeScan::single(1.0).unwrap(), &detunings, &model, Measurement::Expected)
        .unwrap();
    for (n, &d) in s.normalized[0].iter().zip(&detunings) {
        let w2 = RABI * RABI + d * d;
        let p = RABI * RABI / w2 * (w2.sqrt() * t / 2.0).sin().powi(2);
        assert!((n - (1.0 - p)).abs() < 0.02);
    }
    let far = podmr_spectrum(&pulse, &AmplitudeScan::single(1.0).unwrap(), &[TAU * 500e6], &model, Measurement::Expected)
        .unwrap();
    assert!((far.normalized[0][0] - 1.0).abs() < 1e-3);
}

#[test]
fn resonant_dip_reaches_the_readout_ceiling() {
    let model = NvModel {
        hyperfine: HyperfineModel::single_line(),
        ..NvModel::default()
    };
    let r = model.readout_response().unwrap();
    let ceiling = 1.0 - r.spin1.readout / r.spin0.readout;
    let s = podmr_spectrum(&model.pi_reference(), &AmplitudeScan::single(1.0).unwrap(), &[0.0], &model, Measurement::Expected)
        .unwrap();
    assert!(((1.0 - s.normalized[0][0]) - ceiling).abs() < 1e-9);
    // the pulsed-ODMR FoM of a perfect inversion is one minus the readout contrast
    let fom = podmr_fom(&model.pi_reference(), &AmplitudeScan::single(1.0).unwrap(), 0.0, &model, Measurement::Expected)
        .unwrap();
    let c_max = (r.spin0.readout - r.spin1.readout) / (r.spin0.readout + r.spin1.readout);
    assert!((fom.fom - (1.0 - c_max)).abs() < 1e-9);
}

#[test]
fn gate_populations_match_closed_forms() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pi_x = Unitary2::from_axis_angle([FRAC_PI_2, 0.0, 0.0]);
    for _ in 0..2000 {
        let c = [rng.random_range(-PI..PI), rng.random_range(-PI..PI), rng.random_range(-PI..PI)];
        let n = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
        let h = c.map(|v| v / n);
        let [a, b] = gate_populations(&Unitary2::from_axis_angle(c), &pi_x);
        let oracle_a = 4.0 * h[0] * h[0] * n.sin().powi(2) * (n.cos().powi(2) + h[2] * h[2] * n.sin().powi(2));
        let oracle_b = (2.0 * n).sin().powi(2) * (h[0] * h[0] + h[1] * h[1]);
        assert!((a - oracle_a).abs() < 1e-9);
        assert!((b - oracle_b).abs() < 1e-9);
    }
}

#[test]
fn ramsey_matches_two_level_closed_form() {
    let model = NvModel::ideal(RABI);
    let half = model.rectangular(FRAC_PI_2);
    let t = half.duration();
    let d = TAU * 1.7e6;
    let taus: Vec<f64> = (0..120).map(|k| k as f64 * 13e-9).collect();
    let f = ramsey_fringe(&half, 1.0, &taus, d, &model, Measurement::Expected).unwrap();
    let u = rabi_unitary(RABI, d, t);
    for (&tau, p) in taus.iter().zip(&f.spin1_population) {
        let i = Complex64::i();
        let free = [
            [(-i * d * tau / 2.0).exp(), Complex64::new(0.0, 0.0)],
            [Complex64::new(0.0, 0.0), (i * d * tau / 2.0).exp()],
        ];
        let total = mul(u, mul(free, u));
        assert!((total[1][0].norm_sqr() - p).abs() < 1e-6);
    }
    // ideal-readout normalization
    for (n, p) in f.normalized.iter().zip(&f.spin1_population) {
        assert!((n - (1.0 - p)).abs() < 1e-12);
    }
}

fn hyperfine_fringe(t2: f64, rabi_hz: f64, detuning_hz: f64, taus: &[f64]) -> Vec<f64> {
    let model = NvModel {
        rabi_max: TAU * rabi_hz,
        hyperfine: HyperfineModel {
            dephasing_nodes: 24,
            ..HyperfineModel::nitrogen14(t2)
        },
        readout: nvqoc::model::ReadoutModel::Ideal { bright: 1.0, dark: 0.0 },
        ..NvModel::default()
    };
    let half = model.rectangular(FRAC_PI_2);
    ramsey_fringe(&half, 1.0, taus, TAU * detuning_hz, &model, Measurement::Expected)
        .unwrap()
        .normalized
}

#[test]
fn dephased_fringe_decays_with_t2_star() {
    let t2 = 1e-6;
    let taus: Vec<f64> = (0..200).map(|k| k as f64 * 12e-9).collect();
    let y = hyperfine_fringe(t2, 100e6, 5e6, &taus);
    let priors = [5e6 - 2.16e6, 5e6, 5e6 + 2.16e6];
    let fit = fit_ramsey(&taus, &y, None, &priors, 2.0, &FitConfig::default()).unwrap();
    assert!((fit.t2_star - t2).abs() < 0.1 * t2, "{}", fit.t2_star);
}

#[test]
fn resonant_hyperfine_beating_shortens_apparent_t2_star() {
    let t2 = 1.5e-6;
    let taus: Vec<f64> = (0..250).map(|k| k as f64 * 12e-9).collect();
    let fitted = |detuning_hz: f64| {
        let y = hyperfine_fringe(t2, 10e6, detuning_hz, &taus);
        let priors: Vec<f64> = [-2.16e6, 0.0, 2.16e6].iter().map(|o| detuning_hz - o).collect();
        fit_ramsey(&taus, &y, None, &priors, 2.0, &FitConfig::default()).unwrap()
    };
    let (on, off) = (fitted(0.0), fitted(10e6));
    assert!(on.t2_star < off.t2_star, "{} vs {}", on.t2_star, off.t2_star);
    // both stay near the true value: the shortening is a small pulse-error effect
    for f in [&on, &off] {
        assert!((f.t2_star / t2 - 1.0).abs() < 0.03, "{}", f.t2_star);
    }
}

#[test]
fn fom_is_symmetric_in_scan_order() {
    let model = NvModel::ideal(RABI);
    let pulse = model.rectangular(0.8 * PI);
    let scales = [0.3, 0.55, 0.9, 1.0];
    let forward: f64 = scales
        .iter()
        .map(|&s| podmr_fom(&pulse, &AmplitudeScan::single(s).unwrap(), 0.0, &model, Measurement::Expected).unwrap().fom)
        .sum();
    let backward: f64 = scales
        .iter()
        .rev()
        .map(|&s| podmr_fom(&pulse, &AmplitudeScan::single(s).unwrap(), 0.0, &model, Measurement::Expected).unwrap().fom)
        .sum();
    let joint = podmr_fom(&pulse, &AmplitudeScan::new(scales.to_vec()).unwrap(), 0.0, &model, Measurement::Expected)
        .unwrap()
        .fom;
    assert!((forward - backward).abs() < 1e-12);
    assert!((joint - forward / 4.0).abs() < 1e-12);
}

#[test]
fn sampled_fom_error_shrinks_as_inverse_sqrt_shots() {
    let model = NvModel::default();
    let pulse = model.pi_reference();
    let scan = AmplitudeScan::default();
    let stats = |shots: u64| {
        let foms: Vec<f64> = (0..100)
            .map(|seed| podmr_fom(&pulse, &scan, 0.0, &model, Measurement::Sampled { shots, seed }).unwrap().fom)
            .collect();
        let mean = foms.iter().sum::<f64>() / foms.len() as f64;
        let sd = (foms.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / (foms.len() - 1) as f64).sqrt();
        let reported = podmr_fom(&pulse, &scan, 0.0, &model, Measurement::Sampled { shots, seed: 0 })
            .unwrap()
            .fom_std_error;
        (sd, reported)
    };
    let (a, ra) = stats(10_000);
    let (b, rb) = stats(1_000_000);
    assert!((a / b / 10.0 - 1.0).abs() < 0.2, "{a} {b}");
    assert!((ra / a - 1.0).abs() < 0.25, "{ra} vs {a}");
    assert!((rb / b - 1.0).abs() < 0.25, "{rb} vs {b}");
}

#[test]
fn zero_pulse_is_harmless() {
    let model = NvModel::default();
    let zero = ControlPulse::new(vec![[0.0, 0.0]; 4], 1e-9).unwrap();
    let r = podmr_fom(&zero, &AmplitudeScan::default(), 0.0, &model, Measurement::Expected).unwrap();
    assert!((r.fom - 1.0).abs() < 1e-12);
}
