//! Python bindings: pulses, models, propagation, sequence FoMs, fits,
//! sensitivity formulas and the two optimization steps against the built-in
//! simulator. Structured results cross the boundary as JSON strings.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use nvqoc::model::NvModel as CoreModel;
use nvqoc::protocols::{self, AmplitudeScan, Measurement};
use nvqoc::runner::{self, steps, Loopback, RunConfig as CoreConfig};
use nvqoc::sensitivity::{self, FitConfig};
use nvqoc::spin::{self, ControlPulse as CorePulse, RwaHamiltonianParams};

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn json<T: serde::Serialize>(v: &T) -> PyResult<String> {
    serde_json::to_string(v).map_err(err)
}

fn measurement(shots: Option<u64>, seed: u64) -> Measurement {
    match shots {
        Some(shots) => Measurement::Sampled { shots, seed },
        None => Measurement::Expected,
    }
}

/// Piecewise-constant I/Q envelope; samples in rad/s, `dt` in seconds.
#[pyclass(name = "ControlPulse", module = "nvqoc", skip_from_py_object)]
#[derive(Clone)]
struct PyPulse(CorePulse);

#[pymethods]
impl PyPulse {
    #[new]
    fn new(samples: Vec<[f64; 2]>, dt: f64) -> PyResult<Self> {
        CorePulse::new(samples, dt).map(Self).map_err(err)
    }

    #[staticmethod]
    fn rectangular(rabi: f64, phase: f64, duration: f64, n_samples: usize) -> PyResult<Self> {
        CorePulse::rectangular(rabi, phase, duration, n_samples)
            .map(Self)
            .map_err(err)
    }

    #[getter]
    fn samples(&self) -> Vec<[f64; 2]> {
        self.0.samples().to_vec()
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.0.dt()
    }

    #[getter]
    fn duration(&self) -> f64 {
        self.0.duration()
    }

    fn peak_amplitude(&self) -> f64 {
        self.0.peak_amplitude()
    }

    fn to_json(&self) -> PyResult<String> {
        json(&self.0)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        serde_json::from_str(text).map(Self).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __repr__(&self) -> String {
        format!("ControlPulse(samples={}, dt={:e})", self.0.len(), self.0.dt())
    }
}

/// NV model: photophysics rates, drive limit, hyperfine lines, readout.
#[pyclass(name = "NvModel", module = "nvqoc", skip_from_py_object)]
#[derive(Clone)]
struct PyModel(CoreModel);

#[pymethods]
impl PyModel {
    /// The default model (¹⁴N hyperfine, T2* = 2 µs, rate-equation readout).
    #[new]
    fn new() -> Self {
        Self(CoreModel::default())
    }

    /// Spin-only model: single line, no dephasing, perfect readout.
    #[staticmethod]
    fn ideal(rabi_max: f64) -> Self {
        Self(CoreModel::ideal(rabi_max))
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let m: CoreModel = serde_json::from_str(text).map_err(err)?;
        m.validate().map_err(err)?;
        Ok(Self(m))
    }

    fn to_json(&self) -> PyResult<String> {
        json(&self.0)
    }

    #[getter]
    fn rabi_max(&self) -> f64 {
        self.0.rabi_max
    }

    /// Rectangular pulse of the given rotation angle at full amplitude.
    fn rectangular(&self, area: f64) -> PyPulse {
        PyPulse(self.0.rectangular(area))
    }
}

/// Propagator of `pulse` as a 2×2 list of complex numbers.
#[pyfunction]
#[pyo3(signature = (pulse, detuning, rabi_max, scale = 1.0))]
fn propagate(pulse: &PyPulse, detuning: f64, rabi_max: f64, scale: f64) -> PyResult<Vec<Vec<(f64, f64)>>> {
    let params = RwaHamiltonianParams::new(detuning, rabi_max).map_err(err)?;
    let u = spin::propagate(&params, &pulse.0, scale).map_err(err)?;
    Ok((0..2)
        .map(|r| (0..2).map(|c| (u.get(r, c).re, u.get(r, c).im)).collect())
        .collect())
}

/// `|⟨1|U|0⟩|²` of `pulse`.
#[pyfunction]
#[pyo3(signature = (pulse, detuning, rabi_max, scale = 1.0))]
fn transfer(pulse: &PyPulse, detuning: f64, rabi_max: f64, scale: f64) -> PyResult<f64> {
    let params = RwaHamiltonianParams::new(detuning, rabi_max).map_err(err)?;
    Ok(spin::propagate(&params, &pulse.0, scale).map_err(err)?.transfer())
}

/// Axis-angle coefficients `(c_x, c_y, c_z)` of the pulse propagator.
#[pyfunction]
#[pyo3(signature = (pulse, detuning, rabi_max, scale = 1.0))]
fn decompose(pulse: &PyPulse, detuning: f64, rabi_max: f64, scale: f64) -> PyResult<[f64; 3]> {
    let params = RwaHamiltonianParams::new(detuning, rabi_max).map_err(err)?;
    let u = spin::propagate(&params, &pulse.0, scale).map_err(err)?;
    Ok(spin::decompose(&u).map_err(err)?.coefficients)
}

/// Pulsed-ODMR FoM over amplitude `scales`; returns the result as JSON.
#[pyfunction]
#[pyo3(signature = (pulse, model, scales, drive_detuning = 0.0, shots = None, seed = 0))]
fn podmr_fom(
    pulse: &PyPulse,
    model: &PyModel,
    scales: Vec<f64>,
    drive_detuning: f64,
    shots: Option<u64>,
    seed: u64,
) -> PyResult<String> {
    let scan = AmplitudeScan::new(scales).map_err(err)?;
    let r = protocols::podmr_fom(&pulse.0, &scan, drive_detuning, &model.0, measurement(shots, seed)).map_err(err)?;
    json(&r)
}

/// Gate-verification FoM against the model's full-amplitude π reference.
#[pyfunction]
#[pyo3(signature = (pulse, model, scales, drive_detuning = 0.0, shots = None, seed = 0))]
fn gate_verification_fom(
    pulse: &PyPulse,
    model: &PyModel,
    scales: Vec<f64>,
    drive_detuning: f64,
    shots: Option<u64>,
    seed: u64,
) -> PyResult<String> {
    let scan = AmplitudeScan::new(scales).map_err(err)?;
    let reference = model.0.pi_reference();
    let r = protocols::gate_verification_fom(
        &pulse.0,
        &scan,
        drive_detuning,
        &model.0,
        Some(&reference),
        measurement(shots, seed),
    )
    .map_err(err)?;
    json(&r)
}

/// Ramsey fringe with `pulse` as the π/2 gate; returns `(normalized, contrast)`.
#[pyfunction]
#[pyo3(signature = (pulse, model, taus, scale = 1.0, drive_detuning = 0.0))]
fn ramsey_fringe(
    pulse: &PyPulse,
    model: &PyModel,
    taus: Vec<f64>,
    scale: f64,
    drive_detuning: f64,
) -> PyResult<(Vec<f64>, f64)> {
    let f = protocols::ramsey_fringe(&pulse.0, scale, &taus, drive_detuning, &model.0, Measurement::Expected)
        .map_err(err)?;
    let c = f.contrast();
    Ok((f.normalized, c))
}

#[pyfunction]
#[pyo3(signature = (f, y, sigma = None))]
fn fit_gaussian_dip(f: Vec<f64>, y: Vec<f64>, sigma: Option<Vec<f64>>) -> PyResult<String> {
    let fit = sensitivity::fit_gaussian_dip(&f, &y, sigma.as_deref(), &FitConfig::default()).map_err(err)?;
    json(&serde_json::json!({
        "baseline": fit.baseline,
        "contrast": fit.contrast,
        "center": fit.center,
        "width": fit.width,
        "fwhm": fit.fwhm(),
        "std_errors": fit.std_errors,
    }))
}

#[pyfunction]
#[pyo3(signature = (tau, y, priors_hz, decay_order = 2.0, sigma = None))]
fn fit_ramsey(tau: Vec<f64>, y: Vec<f64>, priors_hz: Vec<f64>, decay_order: f64, sigma: Option<Vec<f64>>) -> PyResult<String> {
    let fit = sensitivity::fit_ramsey(&tau, &y, sigma.as_deref(), &priors_hz, decay_order, &FitConfig::default())
        .map_err(err)?;
    json(&serde_json::json!({
        "baseline": fit.baseline,
        "contrast": fit.contrast,
        "contrast_std_error": fit.contrast_std_error,
        "t2_star": fit.t2_star,
        "t2_star_std_error": fit.t2_star_std_error,
    }))
}

#[pyfunction]
fn eta_spin_projection(spin_factor: f64, g_e: f64, t_m: f64) -> PyResult<f64> {
    sensitivity::eta_spin_projection(spin_factor, g_e, t_m).map_err(err)
}

#[pyfunction]
fn kappa_exp(t_m: f64, t_i: f64) -> PyResult<f64> {
    sensitivity::kappa_exp(t_m, t_i).map_err(err)
}

#[pyfunction]
fn decoherence_factor(t_m: f64, t2_star: f64, m: f64) -> PyResult<f64> {
    sensitivity::decoherence_factor(t_m, t2_star, m).map_err(err)
}

fn config(toml: Option<&str>) -> PyResult<CoreConfig> {
    match toml {
        Some(t) => CoreConfig::from_toml(t).map_err(err),
        None => Ok(CoreConfig::default()),
    }
}

/// Step 1 (readout settings) against the in-process simulator; JSON outcome.
#[pyfunction]
#[pyo3(signature = (config_toml = None))]
fn run_step1(config_toml: Option<&str>) -> PyResult<String> {
    let c = config(config_toml)?;
    let mut t = Loopback::new(runner::experiment_for(&c).map_err(err)?);
    json(&steps::run_step1(&c, &mut t).map_err(err)?)
}

/// Step 2 (dCRAB pulse) against the in-process simulator; returns the
/// optimized pulse and the outcome as JSON.
#[pyfunction]
#[pyo3(signature = (config_toml = None))]
fn run_step2(config_toml: Option<&str>) -> PyResult<(PyPulse, String)> {
    let c = config(config_toml)?;
    let mut t = Loopback::new(runner::experiment_for(&c).map_err(err)?);
    let o = steps::run_step2(&c, &mut t).map_err(err)?;
    let summary = serde_json::json!({
        "baseline_fom": o.baseline_fom,
        "best_fom": o.result.best_fom,
        "superiteration_trace": o.result.superiteration_trace(),
        "evaluations": o.result.evaluations(),
    });
    Ok((PyPulse(o.pulse().clone()), json(&summary)?))
}

#[pymodule]
#[pyo3(name = "nvqoc")]
fn nvqoc_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPulse>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(propagate, m)?)?;
    m.add_function(wrap_pyfunction!(transfer, m)?)?;
    m.add_function(wrap_pyfunction!(decompose, m)?)?;
    m.add_function(wrap_pyfunction!(podmr_fom, m)?)?;
    m.add_function(wrap_pyfunction!(gate_verification_fom, m)?)?;
    m.add_function(wrap_pyfunction!(ramsey_fringe, m)?)?;
    m.add_function(wrap_pyfunction!(fit_gaussian_dip, m)?)?;
    m.add_function(wrap_pyfunction!(fit_ramsey, m)?)?;
    m.add_function(wrap_pyfunction!(eta_spin_projection, m)?)?;
    m.add_function(wrap_pyfunction!(kappa_exp, m)?)?;
    m.add_function(wrap_pyfunction!(decoherence_factor, m)?)?;
    m.add_function(wrap_pyfunction!(run_step1, m)?)?;
    m.add_function(wrap_pyfunction!(run_step2, m)?)?;
    m.add("PROTOCOL_VERSION", runner::PROTOCOL_VERSION)?;
    Ok(())
}
