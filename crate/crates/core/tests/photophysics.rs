use nvqoc::photophysics::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Fixed-step RK4 on the rate equations written out level by level.
fn rk4(rates: &NvRates, pump: f64, p0: [f64; 5], duration: f64, steps: usize) -> ([f64; 5], f64) {
    let deriv = |s: &[f64; 6]| {
        let [g0, g1, e0, e1, m, _] = *s;
        [
            -pump * g0 + rates.radiative * e0 + rates.metastable_to_g0 * m,
            -pump * g1 + rates.radiative * e1 + rates.metastable_to_g1 * m,
            pump * g0 - (rates.radiative + rates.isc_spin0) * e0,
            pump * g1 - (rates.radiative + rates.isc_spin1) * e1,
            rates.isc_spin0 * e0 + rates.isc_spin1 * e1 - (rates.metastable_to_g0 + rates.metastable_to_g1) * m,
            rates.collection_efficiency * rates.radiative * (e0 + e1),
        ]
    };
    let h = duration / steps as f64;
    let mut s = [p0[0], p0[1], p0[2], p0[3], p0[4], 0.0];
    let add = |s: &[f64; 6], k: &[f64; 6], f: f64| {
        let mut o = *s;
        for i in 0..6 {
            o[i] += f * k[i];
        }
        o
    };
    for _ in 0..steps {
        let k1 = deriv(&s);
        let k2 = deriv(&add(&s, &k1, h / 2.0));
        let k3 = deriv(&add(&s, &k2, h / 2.0));
        let k4 = deriv(&add(&s, &k3, h));
        for i in 0..6 {
            s[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    ([s[0], s[1], s[2], s[3], s[4]], s[5])
}

#[test]
fn laser_pulse_matches_rk4() {
    let rates = NvRates::default();
    let power = 15.0;
    let start = [0.0, 1.0, 0.0, 0.0, 0.0];
    let out = evolve_populations(&rates, Laser::On { power_mw: power }, &start, 3e-6).unwrap();
    let (pop, photons) = rk4(&rates, rates.pump_rate(power), start, 3e-6, 60_000);
    for (a, b) in out.populations.iter().zip(&pop) {
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }
    assert!((out.photons - photons).abs() < 1e-9 * photons);
    assert!(out.populations[0] > out.populations[1]);
    assert!((out.populations.iter().sum::<f64>() - 1.0).abs() < 1e-9);
}

#[test]
fn populations_stay_normalized() {
    let rates = NvRates::default();
    let mut p = THERMAL;
    for k in 0..50 {
        let laser = if k % 2 == 0 { Laser::On { power_mw: 30.0 } } else { Laser::Off };
        p = evolve_populations(&rates, laser, &p, 37e-9).unwrap().populations;
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(p.iter().all(|&x| x >= -1e-15));
    }
}

#[test]
fn default_rates_give_realistic_contrast() {
    let rates = NvRates::default();
    let params = ReadoutParams {
        laser_power_mw: 10.0,
        laser_duration_ns: 1000.0,
        readout_window_ns: 300.0,
        wait_time_ns: 300.0,
    };
    let r = readout_response(&rates, &params).unwrap();
    let c = contrast(r.spin0.readout, r.spin1.readout).unwrap();
    assert!(c > 0.2 && c < 0.45, "{c}");
}

#[test]
fn contrast_noise_scales_as_inverse_sqrt_n() {
    let rates = NvRates::default();
    let params = ReadoutParams::initial_guess(rates.saturation_power_mw);
    let response = readout_response(&rates, &params).unwrap();
    let trials = 200;
    let spread = |shots: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(shots);
        let c: Vec<f64> = (0..trials)
            .map(|_| {
                let counts = sample_counts(&response, 1.0, 1, shots, &mut rng).unwrap();
                counts_contrast(&counts).unwrap()
            })
            .collect();
        let mean = c.iter().sum::<f64>() / trials as f64;
        (c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (trials - 1) as f64).sqrt()
    };
    let s = [spread(1_000), spread(10_000), spread(100_000)];
    for w in s.windows(2) {
        let ratio = w[0] / w[1];
        assert!((ratio / 10f64.sqrt() - 1.0).abs() < 0.2, "ratio {ratio}");
    }
}

#[test]
fn noise_forms_agree() {
    for (r0, r1) in [(100.0, 50.0), (7.0, 3.0), (1e4, 9.5e3), (0.2, 0.1)] {
        let n = readout_noise(r0, r1).unwrap();
        assert!((n.fidelity - n.fidelity_from_contrast).abs() < 1e-12);
    }
    assert!(matches!(readout_noise(5.0, 5.0), Err(nvqoc::Error::InfiniteNoise)));
}
