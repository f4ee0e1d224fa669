//! Server side: turns requests into simulated measurements.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::protocol::{request_seed, EvalRequest, EvalResponse, Payload, RawData, PROTOCOL_VERSION};
use crate::error::{Error, Result};
use crate::model::{NvModel, ReadoutModel};
use crate::photophysics::{
    contrast, fom_readout, readout_response, sample_counts, ReadoutParams, ReadoutResponse,
    SaturationNormalization, WindowYield,
};
use crate::protocols::{
    ensemble_transfer, gate_verification_fom, podmr_fom, podmr_spectrum, ramsey_fringe, Measurement,
};
use crate::spin::ControlPulse;

/// Synthetic readout whose FoM optimum sits at known parameters: the
/// contrast decays exponentially with the distance from the optimum in
/// bound-normalized units, so the slope is the same near and far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedReadout {
    pub optimum: ReadoutParams,
    pub peak_contrast: f64,
    /// Decay length in bound-normalized units.
    pub width: f64,
    /// Expected `|0⟩` counts per shot in the readout window.
    pub bright_per_shot: f64,
    /// Expected counts per shot in the saturation window.
    pub saturation_per_shot: f64,
}

impl PlantedReadout {
    pub fn new(optimum: ReadoutParams) -> Self {
        Self {
            optimum,
            peak_contrast: 0.3,
            width: 0.5,
            bright_per_shot: 5.0,
            saturation_per_shot: 5.0,
        }
    }

    /// Bound ranges used to normalize offsets. The window range is the
    /// proportional band at the planted laser duration.
    pub fn ranges(&self) -> [f64; 4] {
        let w = ReadoutParams::WINDOW_FRACTION;
        [
            ReadoutParams::POWER_MW.1 - ReadoutParams::POWER_MW.0,
            ReadoutParams::DURATION_NS.1 - ReadoutParams::DURATION_NS.0,
            (w.1 - w.0) * self.optimum.laser_duration_ns,
            ReadoutParams::WAIT_NS.1 - ReadoutParams::WAIT_NS.0,
        ]
    }

    /// `(x − x*)/range` per parameter.
    pub fn offsets(&self, p: &ReadoutParams) -> [f64; 4] {
        let (x, o, r) = (p.as_array(), self.optimum.as_array(), self.ranges());
        [0, 1, 2, 3].map(|i| (x[i] - o[i]) / r[i])
    }

    pub fn contrast(&self, p: &ReadoutParams) -> f64 {
        let d: f64 = self.offsets(p).iter().map(|d| d * d).sum::<f64>().sqrt();
        self.peak_contrast * (-d / self.width).exp()
    }

    pub fn response(&self, p: &ReadoutParams) -> ReadoutResponse {
        let c = self.contrast(p);
        let b = self.bright_per_shot;
        ReadoutResponse {
            spin0: WindowYield {
                readout: b,
                saturation: self.saturation_per_shot,
            },
            spin1: WindowYield {
                readout: b * (1.0 - c) / (1.0 + c),
                saturation: self.saturation_per_shot,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.optimum.validate()?;
        if !(self.peak_contrast > 0.0 && self.peak_contrast < 1.0) {
            return Err(crate::error::invalid("peak_contrast", "must lie in (0, 1)"));
        }
        if !(self.width > 0.0) || !(self.bright_per_shot > 0.0) || !(self.saturation_per_shot >= 0.0) {
            return Err(crate::error::invalid("planted", "width and count rates must be positive"));
        }
        Ok(())
    }
}

/// Where readout-parameter requests are answered from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Backend {
    /// Rate-equation photophysics of the configured model.
    #[default]
    Simulator,
    /// [`PlantedReadout`] for readout requests; pulse requests still use the model.
    Planted(PlantedReadout),
}

/// A rejected request: which field, and why.
#[derive(Debug, Clone, PartialEq)]
pub struct RequestError {
    pub field: Option<String>,
    pub message: String,
}

impl RequestError {
    fn at(prefix: &str, e: Error) -> Self {
        let field = match &e {
            Error::InvalidArgument { field, .. } => format!("{prefix}.{field}"),
            _ => prefix.to_string(),
        };
        Self {
            field: Some(field),
            message: e.to_string(),
        }
    }
}

impl From<Error> for RequestError {
    fn from(e: Error) -> Self {
        Self {
            field: None,
            message: e.to_string(),
        }
    }
}

/// The simulated experiment behind the server.
#[derive(Debug, Clone)]
pub struct Experiment {
    model: NvModel,
    backend: Backend,
    master_seed: u64,
    normalization: SaturationNormalization,
    pi_reference: ControlPulse,
}

impl Experiment {
    pub fn new(model: NvModel, backend: Backend, master_seed: u64) -> Result<Self> {
        model.validate()?;
        if let Backend::Planted(p) = &backend {
            p.validate()?;
        }
        let pi_reference = model.pi_reference();
        Ok(Self {
            model,
            backend,
            master_seed,
            normalization: SaturationNormalization::default(),
            pi_reference,
        })
    }

    pub fn with_normalization(mut self, n: SaturationNormalization) -> Self {
        self.normalization = n;
        self
    }

    pub fn model(&self) -> &NvModel {
        &self.model
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn evaluate(&self, req: &EvalRequest) -> std::result::Result<EvalResponse, RequestError> {
        let start = Instant::now();
        if req.version != PROTOCOL_VERSION {
            return Err(RequestError {
                field: Some("version".into()),
                message: format!("unsupported protocol version {}, expected {PROTOCOL_VERSION}", req.version),
            });
        }
        if req.shots == Some(0) {
            return Err(RequestError {
                field: Some("shots".into()),
                message: "shot budget must be positive".into(),
            });
        }
        let seed = req.shots.map(|_| request_seed(self.master_seed, req.id));
        let measurement = match (req.shots, seed) {
            (Some(shots), Some(seed)) => Measurement::Sampled { shots, seed },
            _ => Measurement::Expected,
        };
        let (fom, std_error, raw) = match &req.payload {
            Payload::ReadoutParams { params, repetitions } => {
                params.validate().map_err(|e| RequestError::at("payload.params", e))?;
                self.readout(params, *repetitions, req.shots, seed)?
            }
            Payload::PodmrFom {
                pulse,
                scan,
                drive_detuning,
                readout,
            } => {
                let model = self.model_for(pulse, readout.as_ref())?;
                let r = podmr_fom(pulse, scan, *drive_detuning, &model, measurement)?;
                (r.fom, r.fom_std_error, RawData::Points { points: r.points })
            }
            Payload::RamseyGateFom {
                pulse,
                scan,
                drive_detuning,
                reference,
                readout,
            } => {
                let model = self.model_for(pulse, readout.as_ref())?;
                let reference = match reference {
                    Some(r) => {
                        self.check_amplitude(r, "payload.reference")?;
                        r
                    }
                    None => &self.pi_reference,
                };
                let r = gate_verification_fom(pulse, scan, *drive_detuning, &model, Some(reference), measurement)?;
                (r.fom, r.fom_std_error, RawData::Points { points: r.points })
            }
            Payload::Spectrum {
                pulse,
                scan,
                detunings,
                readout,
            } => {
                if detunings.is_empty() || detunings.iter().any(|d| !d.is_finite()) {
                    return Err(RequestError {
                        field: Some("payload.detunings".into()),
                        message: "need at least one finite detuning".into(),
                    });
                }
                let model = self.model_for(pulse, readout.as_ref())?;
                let s = podmr_spectrum(pulse, scan, detunings, &model, measurement)?;
                // the dip floor is the figure a spectrum is judged by
                let floor = s.normalized.iter().flatten().copied().fold(f64::INFINITY, f64::min);
                (floor, 0.0, RawData::Spectrum { spectrum: s })
            }
            Payload::Fringe {
                pulse,
                scale,
                taus,
                drive_detuning,
                readout,
            } => {
                if !(*scale > 0.0 && *scale <= 1.0) {
                    return Err(RequestError {
                        field: Some("payload.scale".into()),
                        message: format!("{scale} not in (0, 1]"),
                    });
                }
                if taus.is_empty() {
                    return Err(RequestError {
                        field: Some("payload.taus".into()),
                        message: "need at least one free-precession time".into(),
                    });
                }
                let model = self.model_for(pulse, readout.as_ref())?;
                let f = ramsey_fringe(pulse, *scale, taus, *drive_detuning, &model, measurement)
                    .map_err(|e| RequestError::at("payload", e))?;
                (1.0 - f.contrast(), 0.0, RawData::Fringe { fringe: f })
            }
        };
        Ok(EvalResponse {
            version: PROTOCOL_VERSION,
            id: req.id,
            fom,
            std_error,
            seed,
            raw: Some(raw),
            server_time_us: start.elapsed().as_micros() as u64,
        })
    }

    fn check_amplitude(&self, pulse: &ControlPulse, field: &str) -> std::result::Result<(), RequestError> {
        let peak = pulse.peak_amplitude();
        if peak > self.model.rabi_max * (1.0 + 1e-9) {
            return Err(RequestError {
                field: Some(field.into()),
                message: format!(
                    "peak amplitude {peak:.6e} rad/s exceeds Ω_max = {:.6e} rad/s",
                    self.model.rabi_max
                ),
            });
        }
        Ok(())
    }

    /// The model with the request's readout settings applied.
    fn model_for(
        &self,
        pulse: &ControlPulse,
        readout: Option<&ReadoutParams>,
    ) -> std::result::Result<NvModel, RequestError> {
        self.check_amplitude(pulse, "payload.pulse")?;
        let mut model = self.model.clone();
        if let Some(p) = readout {
            p.validate().map_err(|e| RequestError::at("payload.readout", e))?;
            match &mut model.readout {
                ReadoutModel::Photophysics { params } => *params = *p,
                ReadoutModel::Ideal { .. } => {
                    return Err(RequestError {
                        field: Some("payload.readout".into()),
                        message: "the server models ideal readout; laser settings do not apply".into(),
                    })
                }
            }
        }
        Ok(model)
    }

    fn readout(
        &self,
        params: &ReadoutParams,
        repetitions: usize,
        shots: Option<u64>,
        seed: Option<u64>,
    ) -> std::result::Result<(f64, f64, RawData), RequestError> {
        let (response, transfer) = match &self.backend {
            Backend::Planted(p) => (p.response(params), 1.0),
            Backend::Simulator => (
                readout_response(&self.model.rates, params)?,
                ensemble_transfer(&self.model, &self.pi_reference, 1.0, 0.0)?,
            ),
        };
        let inverted = response.with_transfer(transfer);
        let (Some(shots), Some(seed)) = (shots, seed) else {
            let c = contrast(response.spin0.readout, inverted.readout)?;
            return Ok((1.0 - c, 0.0, RawData::Readout { counts: None, contrast: c }));
        };
        if repetitions < 2 {
            return Err(RequestError {
                field: Some("payload.repetitions".into()),
                message: "need at least two repetitions".into(),
            });
        }
        let per_block = shots / repetitions as u64;
        if per_block == 0 {
            return Err(RequestError {
                field: Some("shots".into()),
                message: format!("{shots} shots cannot fill {repetitions} repetitions"),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let counts = sample_counts(&response, transfer, repetitions, per_block, &mut rng)?;
        let fom = fom_readout(&counts, self.normalization)?;
        let t = counts.totals();
        let (a, b) = (t.r0 as f64, t.r1 as f64);
        let c = contrast(a, b)?;
        // first-order Poisson error of the contrast carried into the FoM
        let std_error = (4.0 * a * b / (a + b).powi(3)).sqrt() * (1.0 - fom) / c.abs().max(f64::MIN_POSITIVE);
        Ok((
            fom,
            std_error,
            RawData::Readout {
                counts: Some(counts),
                contrast: c,
            },
        ))
    }
}
