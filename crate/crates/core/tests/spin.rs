use std::f64::consts::{PI, TAU};

use nalgebra::Matrix2;
use num_complex::Complex64;
use proptest::prelude::*;

use nvqoc::spin::{decompose, propagate, ControlPulse, RwaHamiltonianParams, Unitary2};

const RABI: f64 = TAU * 10e6;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Product of general matrix exponentials, independent of the closed form.
fn oracle(detuning: f64, pulse: &ControlPulse, scale: f64) -> Matrix2<Complex64> {
    let mut u = Matrix2::identity();
    for s in pulse.samples() {
        let (x, y, z) = (scale * s[0], scale * s[1], detuning);
        let h = Matrix2::new(c(z, 0.0), c(x, -y), c(x, y), c(-z, 0.0)) * c(0.5, 0.0);
        let step = (h * c(0.0, -pulse.dt())).exp();
        u = step * u;
    }
    u
}

fn max_diff(u: &Unitary2, m: &Matrix2<Complex64>) -> f64 {
    let mut d: f64 = 0.0;
    for r in 0..2 {
        for k in 0..2 {
            d = d.max((u.get(r, k) - m[(r, k)]).norm());
        }
    }
    d
}

fn pulse_strategy() -> impl Strategy<Value = ControlPulse> {
    (1usize..60, 0.1e-9..5e-9).prop_flat_map(|(n, dt)| {
        proptest::collection::vec((0.0f64..1.0, 0.0f64..TAU), n)
            .prop_map(move |s| ControlPulse::new(s.iter().map(|(a, p)| [RABI * a * p.cos(), RABI * a * p.sin()]).collect(), dt).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn closed_form_matches_matrix_exponential(
        pulse in pulse_strategy(),
        detuning in -TAU * 30e6..TAU * 30e6,
        scale in 0.05f64..=1.0,
    ) {
        let u = propagate(&RwaHamiltonianParams::new(detuning, RABI).unwrap(), &pulse, scale).unwrap();
        prop_assert!(u.unitarity_error() < 1e-10);
        prop_assert!((u.det().norm() - 1.0).abs() < 1e-10);
        prop_assert!(max_diff(&u, &oracle(detuning, &pulse, scale)) < 1e-9);
    }

    #[test]
    fn decomposition_reconstructs_up_to_phase(
        pulse in pulse_strategy(),
        detuning in -TAU * 30e6..TAU * 30e6,
    ) {
        let u = propagate(&RwaHamiltonianParams::new(detuning, RABI).unwrap(), &pulse, 1.0).unwrap();
        let d = decompose(&u).unwrap();
        prop_assert!(d.angle >= 0.0 && d.angle <= PI / 2.0 + 1e-12);
        prop_assert!(u.phase_distance(&d.unitary()) < 1e-9);
    }

    #[test]
    fn splitting_a_pulse_composes(pulse in pulse_strategy(), detuning in -TAU * 5e6..TAU * 5e6) {
        let p = RwaHamiltonianParams::new(detuning, RABI).unwrap();
        let doubled = pulse.concat(&pulse).unwrap();
        let once = propagate(&p, &pulse, 1.0).unwrap();
        let twice = propagate(&p, &doubled, 1.0).unwrap();
        let product = once * once;
        for r in 0..2 {
            for k in 0..2 {
                prop_assert!((twice.get(r, k) - product.get(r, k)).norm() < 1e-10);
            }
        }
    }
}

#[test]
fn detuned_rabi_closed_form() {
    for &detuning in &[0.0, TAU * 1e6, TAU * 7e6, -TAU * 12e6] {
        let p = RwaHamiltonianParams::new(detuning, RABI).unwrap();
        for n in [1usize, 37, 200] {
            let pulse = ControlPulse::rectangular(RABI, 0.0, n as f64 * 1e-9, n).unwrap();
            let t = pulse.duration();
            let omega = RABI.hypot(detuning);
            let expected = (RABI / omega).powi(2) * (omega * t / 2.0).sin().powi(2);
            let u = propagate(&p, &pulse, 1.0).unwrap();
            assert!((u.transfer() - expected).abs() < 1e-12, "Δ={detuning} n={n}");
        }
    }
}

#[test]
fn out_of_range_inputs_are_rejected() {
    let p = RwaHamiltonianParams::new(0.0, RABI).unwrap();
    let pulse = ControlPulse::rectangular(RABI, 0.0, 10e-9, 10).unwrap();
    assert!(propagate(&p, &pulse, 0.0).is_err());
    assert!(propagate(&p, &pulse, 1.5).is_err());
    let hot = ControlPulse::rectangular(2.0 * RABI, 0.0, 10e-9, 10).unwrap();
    assert!(propagate(&p, &hot, 1.0).is_err());
    assert!(ControlPulse::new(vec![[f64::NAN, 0.0]], 1e-9).is_err());
}
