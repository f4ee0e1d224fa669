//! Client-side drivers for the two optimization steps and the post-run scans.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::config::{RunConfig, Target};
use super::protocol::{EvalRequest, EvalResponse, Payload, RawData};
use super::transport::Transport;
use crate::error::{Error, Result};
use crate::model::NvModel;
use crate::optimizer::{
    dcrab_optimize, nelder_mead, Constraint, DcrabResult, Measured, OptimizerState, Parameter, SearchSpace,
};
use crate::photophysics::ReadoutParams;
use crate::protocols::AmplitudeScan;
use crate::pulse::Waveform;
use crate::sensitivity::{
    eta_podmr, eta_ramsey, fit_gaussian_dip, fit_ramsey, FitConfig, ReportRow, SensitivityParams,
    SensitivityReport,
};
use crate::spin::ControlPulse;

pub const STEP1: &str = "step1";
pub const STEP2: &str = "step2";
pub const SCAN: &str = "scan";

/// Request ids of different steps never collide, so neither do their seeds.
pub fn id_base(step: &str) -> u64 {
    match step {
        STEP1 => 0,
        STEP2 => 1 << 32,
        _ => 2 << 32,
    }
}

/// Hands out sequential request ids.
struct Client<'a> {
    transport: &'a mut dyn Transport,
    next_id: u64,
    shots: Option<u64>,
    exchanges: Vec<(EvalRequest, EvalResponse)>,
}

impl<'a> Client<'a> {
    fn new(transport: &'a mut dyn Transport, step: &str, shots: Option<u64>) -> Self {
        Self {
            transport,
            next_id: id_base(step),
            shots,
            exchanges: Vec::new(),
        }
    }

    fn measure(&mut self, payload: Payload) -> Result<EvalResponse> {
        let request = EvalRequest::new(self.next_id, self.shots, payload);
        self.next_id += 1;
        let response = self.transport.evaluate(&request)?;
        self.exchanges.push((request, response.clone()));
        Ok(response)
    }
}

/// The readout-parameter box with `W_ro ∈ [0.25, 0.75]·𝓛_d`.
pub fn step1_space() -> Result<SearchSpace> {
    let (p, d, f, w) = (
        ReadoutParams::POWER_MW,
        ReadoutParams::DURATION_NS,
        ReadoutParams::WINDOW_FRACTION,
        ReadoutParams::WAIT_NS,
    );
    SearchSpace::new(vec![
        Parameter::new("laser_power_mw", p.0, p.1),
        Parameter::new("laser_duration_ns", d.0, d.1),
        Parameter::new("readout_window_ns", f.0 * d.0, f.1 * d.1),
        Parameter::new("wait_time_ns", w.0, w.1),
    ])?
    .with_constraint(Constraint {
        target: 2,
        reference: 1,
        lo_factor: f.0,
        hi_factor: f.1,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step1Outcome {
    pub initial: ReadoutParams,
    pub initial_fom: f64,
    pub params: ReadoutParams,
    pub fom: f64,
    pub std_error: f64,
    pub state: OptimizerState,
}

pub fn step1_initial(config: &RunConfig) -> ReadoutParams {
    config
        .step1
        .initial
        .unwrap_or_else(|| ReadoutParams::initial_guess(config.model.rates.saturation_power_mw))
}

/// Nelder–Mead over the laser settings against the readout FoM.
pub fn run_step1(config: &RunConfig, transport: &mut dyn Transport) -> Result<Step1Outcome> {
    let initial = step1_initial(config);
    initial.validate()?;
    let space = step1_space()?;
    let repetitions = config.step1.repetitions;
    let mut client = Client::new(transport, STEP1, config.step1.shots);
    let mut fom = |x: &[f64]| {
        let params = ReadoutParams::from_array(x)?;
        let r = client.measure(Payload::ReadoutParams { params, repetitions })?;
        Ok(Measured {
            value: r.fom,
            std_error: r.std_error,
        })
    };
    let state = nelder_mead(&space, &initial.as_array(), &config.step1.nelder_mead, &mut fom)?;
    let initial_fom = state.history.first().map_or(f64::NAN, |h| h.fom);
    Ok(Step1Outcome {
        initial,
        initial_fom,
        params: ReadoutParams::from_array(&state.best_x)?,
        fom: state.best_fom,
        std_error: state.best_std_error,
        state,
    })
}

/// Table of bounds, initial guess and optimum, one row per parameter.
pub fn step1_table(o: &Step1Outcome) -> String {
    let (a, b) = (o.initial, o.params);
    let f = ReadoutParams::WINDOW_FRACTION;
    let rows = [
        ("laser_power", "mW", ReadoutParams::POWER_MW, a.laser_power_mw, b.laser_power_mw),
        ("laser_duration", "ns", ReadoutParams::DURATION_NS, a.laser_duration_ns, b.laser_duration_ns),
        (
            "readout_window",
            "ns",
            (f.0 * b.laser_duration_ns, f.1 * b.laser_duration_ns),
            a.readout_window_ns,
            b.readout_window_ns,
        ),
        ("wait_time", "ns", ReadoutParams::WAIT_NS, a.wait_time_ns, b.wait_time_ns),
    ];
    let mut s = String::from("parameter\tunit\tlower\tupper\tinitial\toptimized\n");
    for (name, unit, (lo, hi), init, opt) in rows {
        let _ = writeln!(s, "{name}\t{unit}\t{lo:.1}\t{hi:.1}\t{init:.3}\t{opt:.3}");
    }
    let _ = writeln!(
        s,
        "fom_ro\t-\t-\t-\t{:.6}\t{:.6} ± {:.1e}",
        o.initial_fom, o.fom, o.std_error
    );
    s
}

/// Calibrated rectangular pulse the optimized one is compared against.
pub fn reference_pulse(model: &NvModel, target: Target) -> ControlPulse {
    match target {
        Target::Podmr => model.rectangular(PI),
        Target::Gate => model.rectangular(FRAC_PI_2),
    }
}

fn fom_payload(config: &RunConfig, pulse: &ControlPulse) -> Payload {
    let s2 = &config.step2;
    match s2.target {
        Target::Podmr => Payload::PodmrFom {
            pulse: pulse.clone(),
            scan: s2.scan.clone(),
            drive_detuning: s2.drive_detuning(),
            readout: s2.readout,
        },
        Target::Gate => Payload::RamseyGateFom {
            pulse: pulse.clone(),
            scan: s2.scan.clone(),
            drive_detuning: s2.drive_detuning(),
            reference: None,
            readout: s2.readout,
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step2Outcome {
    pub target: Target,
    pub baseline_fom: f64,
    pub result: DcrabResult,
}

impl Step2Outcome {
    pub fn pulse(&self) -> &ControlPulse {
        &self.result.best_pulse
    }
}

/// The rectangular initial guess on the dCRAB time grid.
pub fn initial_guess(config: &RunConfig) -> Result<Waveform> {
    let t = config.step2.duration();
    let rabi = config.model.rabi_max;
    let n = ControlPulse::samples_for(t, rabi, config.model.max_step_angle);
    Waveform::constant(config.step2.guess_amplitude * rabi, 0.0, t, n)
}

/// dCRAB against the pulsed-ODMR or gate-verification FoM, after one
/// measurement of the rectangular baseline.
pub fn run_step2(config: &RunConfig, transport: &mut dyn Transport) -> Result<Step2Outcome> {
    let s2 = &config.step2;
    let mut client = Client::new(transport, STEP2, s2.shots);
    let baseline = client.measure(fom_payload(config, &reference_pulse(&config.model, s2.target)))?;
    let dcrab = s2.dcrab(config.model.rabi_max, config.seed);
    let guess = initial_guess(config)?;
    let mut fom = |pulse: &ControlPulse| {
        let r = client.measure(fom_payload(config, pulse))?;
        Ok(Measured {
            value: r.fom,
            std_error: r.std_error,
        })
    };
    let result = dcrab_optimize(&dcrab, &guess, &mut fom)?;
    Ok(Step2Outcome {
        target: s2.target,
        baseline_fom: baseline.fom,
        result,
    })
}

/// Ramsey line priors (Hz) for a drive detuning (rad/s).
pub fn ramsey_priors(model: &NvModel, drive_detuning: f64) -> Vec<f64> {
    model
        .hyperfine
        .offsets
        .iter()
        .map(|o| (drive_detuning - o) / TAU)
        .collect()
}

/// Post-run scans of `pulse`: spectra per amplitude scale for an inversion
/// pulse; fringes per scale and per drive detuning for a π/2 pulse.
pub fn run_scan(
    config: &RunConfig,
    target: Target,
    pulse: &ControlPulse,
    transport: &mut dyn Transport,
) -> Result<Vec<(EvalRequest, EvalResponse)>> {
    let sc = &config.scan;
    let readout = config.step2.readout;
    let mut client = Client::new(transport, SCAN, sc.shots);
    match target {
        Target::Podmr => {
            let detunings: Vec<f64> = sc.detunings_hz.points().iter().map(|d| TAU * d).collect();
            for &s in sc.scales.scales() {
                client.measure(Payload::Spectrum {
                    pulse: pulse.clone(),
                    scan: AmplitudeScan::single(s)?,
                    detunings: detunings.clone(),
                    readout,
                })?;
            }
        }
        Target::Gate => {
            let taus = sc.taus_s.points();
            for &s in sc.scales.scales() {
                client.measure(Payload::Fringe {
                    pulse: pulse.clone(),
                    scale: s,
                    taus: taus.clone(),
                    drive_detuning: TAU * sc.ramsey_detuning_hz,
                    readout,
                })?;
            }
            for d in sc.ramsey_detunings_hz.points() {
                client.measure(Payload::Fringe {
                    pulse: pulse.clone(),
                    scale: 1.0,
                    taus: taus.clone(),
                    drive_detuning: TAU * d,
                    readout,
                })?;
            }
        }
    }
    Ok(client.exchanges)
}

const T_M_CONVENTION: &str = "t_m as configured (t_m = t_w + 2*t_i when set from overheads)";

fn podmr_row(x: f64, detunings: &[f64], normalized: &[f64], params: &SensitivityParams) -> ReportRow {
    match fit_gaussian_dip(detunings, normalized, None, &FitConfig::default()) {
        Ok(fit) => ReportRow {
            x,
            contrast: fit.contrast,
            width: fit.fwhm() / TAU,
            eta: eta_podmr(&fit, params).ok(),
        },
        Err(_) => ReportRow {
            x,
            contrast: f64::NAN,
            width: f64::NAN,
            eta: None,
        },
    }
}

fn ramsey_row(x: f64, taus: &[f64], normalized: &[f64], priors: &[f64], model: &NvModel, params: &SensitivityParams) -> ReportRow {
    let m = model.hyperfine.decay_order;
    match fit_ramsey(taus, normalized, None, priors, m, &FitConfig::default()) {
        Ok(fit) => ReportRow {
            x,
            contrast: fit.contrast,
            width: fit.t2_star,
            eta: eta_ramsey(&fit, params, 0.5 * fit.t2_star).ok(),
        },
        Err(_) => ReportRow {
            x,
            contrast: f64::NAN,
            width: f64::NAN,
            eta: None,
        },
    }
}

/// Sensitivity tables from scan exchanges, in the order [`run_scan`] makes
/// them: amplitude points first, then detuning points.
pub fn build_reports(config: &RunConfig, exchanges: &[(EvalRequest, EvalResponse)]) -> Result<Vec<SensitivityReport>> {
    let n_scales = config.scan.scales.len();
    let mut amplitude_podmr = SensitivityReport::new("podmr", "scale", T_M_CONVENTION);
    let mut amplitude_ramsey = SensitivityReport::new("ramsey", "scale", T_M_CONVENTION);
    let mut detuning_ramsey = SensitivityReport::new("ramsey", "detuning_hz", T_M_CONVENTION);
    let mut fringes = 0;
    for (request, response) in exchanges {
        match (&request.payload, &response.raw) {
            (Payload::Spectrum { pulse, .. }, Some(RawData::Spectrum { spectrum })) => {
                let params = SensitivityParams {
                    t_pi: pulse.duration(),
                    ..config.sensitivity
                };
                for (row, &s) in spectrum.normalized.iter().zip(&spectrum.scales) {
                    amplitude_podmr.rows.push(podmr_row(s, &spectrum.detunings, row, &params));
                }
            }
            (
                Payload::Fringe {
                    scale, drive_detuning, ..
                },
                Some(RawData::Fringe { fringe }),
            ) => {
                let priors = ramsey_priors(&config.model, *drive_detuning);
                let (report, x) = if fringes < n_scales {
                    (&mut amplitude_ramsey, *scale)
                } else {
                    (&mut detuning_ramsey, drive_detuning / TAU)
                };
                report.rows.push(ramsey_row(
                    x,
                    &fringe.taus,
                    &fringe.normalized,
                    &priors,
                    &config.model,
                    &config.sensitivity,
                ));
                fringes += 1;
            }
            (p, _) => {
                return Err(Error::Protocol(format!("no sensitivity table for a {} exchange", p.kind())));
            }
        }
    }
    Ok([amplitude_podmr, amplitude_ramsey, detuning_ramsey]
        .into_iter()
        .filter(|r| !r.rows.is_empty())
        .collect())
}
