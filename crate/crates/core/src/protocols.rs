//! Measurement sequences built from spin propagation and optical readout:
//! pulsed ODMR, gate verification and Ramsey fringes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::NvModel;
use crate::photophysics::{contrast, poisson, ReadoutResponse};
use crate::spin::{propagate, ControlPulse, Unitary2};

/// Amplitude factors `s` applied to `Ω_max`, sorted ascending, all in `(0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct AmplitudeScan {
    scales: Vec<f64>,
}

impl AmplitudeScan {
    pub fn new(scales: Vec<f64>) -> Result<Self> {
        if scales.is_empty() {
            return Err(invalid("scan", "needs at least one scale"));
        }
        if scales.iter().any(|&s| !(s > 0.0 && s <= 1.0)) {
            return Err(invalid("scan", "scales must lie in (0, 1]"));
        }
        if scales.windows(2).any(|w| w[1] < w[0]) {
            return Err(invalid("scan", "scales must be sorted ascending"));
        }
        Ok(Self { scales })
    }

    /// `n` evenly spaced scales from `lo` to `hi` inclusive.
    pub fn uniform(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n == 1 {
            return Self::new(vec![hi]);
        }
        Self::new(
            (0..n)
                .map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
                .collect(),
        )
    }

    pub fn single(scale: f64) -> Result<Self> {
        Self::new(vec![scale])
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn len(&self) -> usize {
        self.scales.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scales.is_empty()
    }
}

impl Default for AmplitudeScan {
    fn default() -> Self {
        Self {
            scales: vec![0.2, 0.4, 0.6, 0.8, 1.0],
        }
    }
}

impl TryFrom<Vec<f64>> for AmplitudeScan {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<AmplitudeScan> for Vec<f64> {
    fn from(s: AmplitudeScan) -> Self {
        s.scales
    }
}

/// Expected counts, or Poisson counts over `shots` repetitions of each shot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Measurement {
    Expected,
    Sampled { shots: u64, seed: u64 },
}

impl Measurement {
    /// Generator for point `index`; points never share a stream.
    fn rng(&self, index: usize) -> Option<(u64, ChaCha8Rng)> {
        match *self {
            Measurement::Expected => None,
            Measurement::Sampled { shots, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(index as u64);
                Some((shots, rng))
            }
        }
    }

    /// Count pair `(a, b)` for per-shot means `(ma, mb)`.
    fn counts(&self, index: usize, ma: f64, mb: f64) -> [f64; 2] {
        match self.rng(index) {
            None => [ma, mb],
            Some((shots, mut rng)) => {
                let n = shots as f64;
                let a = poisson(n * ma, &mut rng) as f64;
                let b = poisson(n * mb, &mut rng) as f64;
                [a, b]
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceKind {
    /// Reference shot (no pulse) and inversion shot.
    Podmr,
    /// `U·π_x·U` and `U·U`.
    GateVerification,
}

/// One amplitude point of a sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalePoint {
    pub scale: f64,
    /// Ensemble-averaged `|1⟩` population before readout, per shot.
    pub spin1_population: [f64; 2],
    /// `(R0, R1)` for pulsed ODMR, `(𝓟0, 𝓟1)` for gate verification.
    pub counts: [f64; 2],
    pub contrast: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceResult {
    pub kind: SequenceKind,
    pub points: Vec<ScalePoint>,
    /// `1 − mean_k C_k`, minimized.
    pub fom: f64,
    pub fom_std_error: f64,
}

impl SequenceResult {
    fn from_points(kind: SequenceKind, points: Vec<ScalePoint>, sampled: bool) -> Self {
        let n = points.len() as f64;
        let fom = 1.0 - points.iter().map(|p| p.contrast).sum::<f64>() / n;
        let fom_std_error = if sampled {
            let var: f64 = points
                .iter()
                .map(|p| contrast_variance(p.counts[0], p.counts[1]))
                .sum();
            var.sqrt() / n
        } else {
            0.0
        };
        Self {
            kind,
            points,
            fom,
            fom_std_error,
        }
    }

    /// FoM recomputed from the stored counts alone.
    pub fn recompute_fom(&self) -> Result<f64> {
        let mut total = 0.0;
        for p in &self.points {
            total += contrast(p.counts[0], p.counts[1])?;
        }
        Ok(1.0 - total / self.points.len() as f64)
    }

    /// Ensemble-averaged inversion per scale (pulsed ODMR only meaningful).
    pub fn mean_transfer(&self) -> f64 {
        self.points.iter().map(|p| p.spin1_population[1]).sum::<f64>() / self.points.len() as f64
    }
}

/// Poisson variance of `(a − b)/(a + b)` propagated to first order.
fn contrast_variance(a: f64, b: f64) -> f64 {
    let s = a + b;
    if s <= 0.0 {
        return 0.0;
    }
    4.0 * a * b / (s * s * s)
}

fn point_contrast(counts: [f64; 2]) -> f64 {
    // an empty pair carries no information; score it as zero contrast
    contrast(counts[0], counts[1]).unwrap_or(0.0)
}

/// `|1⟩` population after `pulse` at `scale`, averaged over the hyperfine and
/// dephasing ensemble.
pub fn ensemble_transfer(
    model: &NvModel,
    pulse: &ControlPulse,
    scale: f64,
    drive_detuning: f64,
) -> Result<f64> {
    let mut p = 0.0;
    for (detuning, w) in model.hyperfine.ensemble(drive_detuning) {
        p += w * propagate(&model.hamiltonian(detuning), pulse, scale)?.transfer();
    }
    Ok(p.clamp(0.0, 1.0))
}

/// Pulsed ODMR: a reference shot in `m_s = 0` and a shot after `pulse`, at
/// every scale of the scan.
pub fn podmr_fom(
    pulse: &ControlPulse,
    scan: &AmplitudeScan,
    drive_detuning: f64,
    model: &NvModel,
    measurement: Measurement,
) -> Result<SequenceResult> {
    let response = model.readout_response()?;
    let mut points = Vec::with_capacity(scan.len());
    for (k, &scale) in scan.scales().iter().enumerate() {
        let p = ensemble_transfer(model, pulse, scale, drive_detuning)?;
        let counts = measurement.counts(
            k,
            response.spin0.readout,
            response.with_transfer(p).readout,
        );
        points.push(ScalePoint {
            scale,
            spin1_population: [0.0, p],
            counts,
            contrast: point_contrast(counts),
        });
    }
    Ok(SequenceResult::from_points(
        SequenceKind::Podmr,
        points,
        measurement != Measurement::Expected,
    ))
}

/// Normalized counts `N_ph` over detuning (columns) for each scale (rows).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub detunings: Vec<f64>,
    pub scales: Vec<f64>,
    pub normalized: Vec<Vec<f64>>,
}

/// Pulsed-ODMR spectrum, each point divided by its own `m_s = 0` reference.
pub fn podmr_spectrum(
    pulse: &ControlPulse,
    scan: &AmplitudeScan,
    detunings: &[f64],
    model: &NvModel,
    measurement: Measurement,
) -> Result<Spectrum> {
    let response = model.readout_response()?;
    let mut normalized = Vec::with_capacity(scan.len());
    for (k, &scale) in scan.scales().iter().enumerate() {
        let mut row = Vec::with_capacity(detunings.len());
        for (j, &d) in detunings.iter().enumerate() {
            let p = ensemble_transfer(model, pulse, scale, d)?;
            let [r0, r1] = measurement.counts(
                k * detunings.len() + j,
                response.spin0.readout,
                response.with_transfer(p).readout,
            );
            row.push(if r0 > 0.0 { r1 / r0 } else { 0.0 });
        }
        normalized.push(row);
    }
    Ok(Spectrum {
        detunings: detunings.to_vec(),
        scales: scan.scales().to_vec(),
        normalized,
    })
}

/// Success probabilities of the two verification shots for a fixed `U`:
/// `|⟨0|U·π_x·U|0⟩|²` and `|⟨1|U·U|0⟩|²`.
pub fn gate_populations(u: &Unitary2, pi_x: &Unitary2) -> [f64; 2] {
    let a = *u * *pi_x * *u;
    let b = *u * *u;
    [a.get(0, 0).norm_sqr(), b.transfer()]
}

/// Gate verification: shot A is `U·π_x·U` (ideally back in `|0⟩`), shot B is
/// `U·U` (ideally in `|1⟩`). `U` runs at each scale, `π_x` at full amplitude.
pub fn gate_verification_fom(
    pulse: &ControlPulse,
    scan: &AmplitudeScan,
    drive_detuning: f64,
    model: &NvModel,
    reference: Option<&ControlPulse>,
    measurement: Measurement,
) -> Result<SequenceResult> {
    let reference = reference.ok_or(Error::MissingReference)?;
    let response = model.readout_response()?;
    let ensemble = model.hyperfine.ensemble(drive_detuning);
    let mut pi_x = Vec::with_capacity(ensemble.len());
    for &(detuning, _) in &ensemble {
        pi_x.push(propagate(&model.hamiltonian(detuning), reference, 1.0)?);
    }
    let mut points = Vec::with_capacity(scan.len());
    for (k, &scale) in scan.scales().iter().enumerate() {
        let (mut p1_a, mut p1_b) = (0.0, 0.0);
        for (&(detuning, w), pi) in ensemble.iter().zip(&pi_x) {
            let u = propagate(&model.hamiltonian(detuning), pulse, scale)?;
            let [a, b] = gate_populations(&u, pi);
            p1_a += w * (1.0 - a);
            p1_b += w * b;
        }
        let (p1_a, p1_b) = (p1_a.clamp(0.0, 1.0), p1_b.clamp(0.0, 1.0));
        let counts = measurement.counts(
            k,
            response.with_transfer(p1_a).readout,
            response.with_transfer(p1_b).readout,
        );
        points.push(ScalePoint {
            scale,
            spin1_population: [p1_a, p1_b],
            counts,
            contrast: point_contrast(counts),
        });
    }
    Ok(SequenceResult::from_points(
        SequenceKind::GateVerification,
        points,
        measurement != Measurement::Expected,
    ))
}

/// Ramsey fringe normalized by the `m_s = 0` reference count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fringe {
    pub taus: Vec<f64>,
    pub normalized: Vec<f64>,
    pub spin1_population: Vec<f64>,
}

impl Fringe {
    /// Peak-to-peak excursion of the normalized counts.
    pub fn contrast(&self) -> f64 {
        let (lo, hi) = self
            .normalized
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        hi - lo
    }
}

/// `U · free(τ) · U` with `half` at `scale`, averaged over the hyperfine lines
/// and quasi-static detuning draws.
pub fn ramsey_fringe(
    half: &ControlPulse,
    scale: f64,
    taus: &[f64],
    drive_detuning: f64,
    model: &NvModel,
    measurement: Measurement,
) -> Result<Fringe> {
    if taus.iter().any(|&t| !(t >= 0.0)) {
        return Err(invalid("tau", "free precession times must be ≥ 0"));
    }
    let response: ReadoutResponse = model.readout_response()?;
    let ensemble = model.hyperfine.ensemble(drive_detuning);
    let mut pulses = Vec::with_capacity(ensemble.len());
    for &(detuning, _) in &ensemble {
        pulses.push(propagate(&model.hamiltonian(detuning), half, scale)?);
    }
    let mut normalized = Vec::with_capacity(taus.len());
    let mut populations = Vec::with_capacity(taus.len());
    for (j, &tau) in taus.iter().enumerate() {
        let mut p = 0.0;
        for (&(detuning, w), u) in ensemble.iter().zip(&pulses) {
            p += w * (*u * Unitary2::free_evolution(detuning, tau) * *u).transfer();
        }
        let p = p.clamp(0.0, 1.0);
        let [r0, r] = measurement.counts(j, response.spin0.readout, response.with_transfer(p).readout);
        normalized.push(if r0 > 0.0 { r / r0 } else { 0.0 });
        populations.push(p);
    }
    Ok(Fringe {
        taus: taus.to_vec(),
        normalized,
        spin1_population: populations,
    })
}
