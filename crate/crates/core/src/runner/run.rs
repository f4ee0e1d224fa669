//! Run directories: each step writes `manifest.json`, `log.jsonl` and its
//! outputs into one directory, can resume from the log, and can be replayed.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::experiment::Experiment;
use super::log::{read_log, unix_now, LogRecord, Recorder, RunLog, RunManifest, RunSummary, LOG_FILE, MANIFEST_FILE};
use super::steps::{self, Step1Outcome, Step2Outcome, SCAN, STEP1, STEP2};
use super::transport::{Loopback, TcpClient, Transport};
use crate::error::{Error, Result};
use crate::pulse::{read_pulse, write_pulse};
use crate::sensitivity::SensitivityReport;
use crate::spin::ControlPulse;

pub const INPUT_PULSE_FILE: &str = "input_pulse.json";
pub const PULSE_JSON: &str = "pulse.json";
pub const PULSE_TSV: &str = "pulse.tsv";

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: PathBuf,
    /// `host:port` of an experiment server; the in-process simulator if absent.
    pub endpoint: Option<String>,
    pub resume: bool,
    pub config_path: Option<String>,
    pub timeout: Option<Duration>,
}

impl RunOptions {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        Self {
            out: out.into(),
            ..Self::default()
        }
    }
}

/// The simulator a config describes, as served by `serve` or the loopback.
pub fn experiment_for(config: &RunConfig) -> Result<Experiment> {
    Ok(Experiment::new(config.model.clone(), config.backend.clone(), config.seed)?
        .with_normalization(config.saturation_normalization))
}

pub fn connect(config: &RunConfig, endpoint: Option<&str>, timeout: Option<Duration>) -> Result<Box<dyn Transport>> {
    Ok(match endpoint {
        Some(addr) => Box::new(TcpClient::connect(addr, timeout)?),
        None => Box::new(Loopback::new(experiment_for(config)?)),
    })
}

/// Load a pulse from JSON (exact) or the columnar text format.
pub fn load_pulse(path: &Path) -> Result<ControlPulse> {
    let reader = BufReader::new(File::open(path)?);
    if path.extension().is_some_and(|e| e == "json") {
        Ok(serde_json::from_reader(reader)?)
    } else {
        Ok(read_pulse(reader)?.pulse)
    }
}

pub fn save_pulse(dir: &Path, pulse: &ControlPulse, rabi_max: f64) -> Result<()> {
    std::fs::write(dir.join(PULSE_JSON), serde_json::to_string(pulse)?)?;
    write_pulse(BufWriter::new(File::create(dir.join(PULSE_TSV))?), pulse, rabi_max)
}

struct Session {
    dir: PathBuf,
    manifest: RunManifest,
    recorder: Recorder<Box<dyn Transport>>,
    /// The resumed log already holds the final superiteration records.
    logged_superiterations: bool,
}

impl Session {
    fn open(step: &str, config: &RunConfig, opts: &RunOptions) -> Result<Self> {
        std::fs::create_dir_all(&opts.out)?;
        let dir = opts.out.clone();
        let manifest_path = dir.join(MANIFEST_FILE);
        let log_path = dir.join(LOG_FILE);
        let (manifest, log, history) = if opts.resume && manifest_path.exists() {
            let manifest = RunManifest::load(&manifest_path)?;
            if manifest.step != step {
                return Err(Error::Config(format!(
                    "{} holds a {} run, not {step}",
                    dir.display(),
                    manifest.step
                )));
            }
            if manifest.config != *config {
                return Err(Error::Config("config differs from the run being resumed".into()));
            }
            let (log, history) = RunLog::resume(&log_path)?;
            (manifest, log, history)
        } else {
            let mut manifest = RunManifest::new(step, config);
            manifest.config_path = opts.config_path.clone();
            manifest.endpoint = opts.endpoint.clone();
            (manifest, RunLog::create(&log_path)?, Vec::new())
        };
        manifest.save(&manifest_path)?;
        let transport = connect(config, opts.endpoint.as_deref(), opts.timeout)?;
        let recorder = Recorder::new(transport, log, step).with_history(&history);
        let logged_superiterations = history.iter().any(|r| matches!(r, LogRecord::Superiteration { .. }));
        Ok(Self {
            dir,
            manifest,
            recorder,
            logged_superiterations,
        })
    }

    fn finish(mut self, summary: RunSummary) -> Result<RunManifest> {
        self.manifest.finished_unix = Some(unix_now());
        self.manifest.summary = Some(summary);
        self.manifest.save(&self.dir.join(MANIFEST_FILE))?;
        Ok(self.manifest)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

pub fn execute_step1(config: &RunConfig, opts: &RunOptions) -> Result<(Step1Outcome, RunManifest)> {
    let mut s = Session::open(STEP1, config, opts)?;
    let outcome = steps::run_step1(config, &mut s.recorder)?;
    std::fs::write(s.dir.join("step1.tsv"), steps::step1_table(&outcome))?;
    write_json(&s.dir.join("step1.json"), &outcome)?;
    let summary = RunSummary {
        best_fom: outcome.fom,
        best_std_error: outcome.std_error,
        evaluations: outcome.state.evaluations,
        details: serde_json::json!({ "readout": outcome.params, "initial_fom": outcome.initial_fom }),
    };
    let manifest = s.finish(summary)?;
    Ok((outcome, manifest))
}

pub fn execute_step2(config: &RunConfig, opts: &RunOptions) -> Result<(Step2Outcome, RunManifest)> {
    let mut s = Session::open(STEP2, config, opts)?;
    let outcome = steps::run_step2(config, &mut s.recorder)?;
    if !s.logged_superiterations {
        for record in &outcome.result.superiterations {
            s.recorder.log().append(&LogRecord::Superiteration {
                step: STEP2.into(),
                record: record.clone(),
            })?;
        }
    }
    save_pulse(&s.dir, outcome.pulse(), config.model.rabi_max)?;
    write_json(&s.dir.join("step2.json"), &outcome)?;
    let summary = RunSummary {
        best_fom: outcome.result.best_fom,
        best_std_error: outcome.result.best_std_error,
        evaluations: outcome.result.evaluations() + 1,
        details: serde_json::json!({
            "target": outcome.target,
            "baseline_fom": outcome.baseline_fom,
            "superiteration_trace": outcome.result.superiteration_trace(),
        }),
    };
    let manifest = s.finish(summary)?;
    Ok((outcome, manifest))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanOutcome {
    pub reports: Vec<SensitivityReport>,
}

fn report_file(r: &SensitivityReport) -> String {
    format!("sensitivity_{}_{}.tsv", r.protocol, r.axis)
}

/// Scan `pulse`, keeping a copy of it in the run directory so the run is
/// self-contained.
pub fn execute_scan(config: &RunConfig, pulse: &ControlPulse, opts: &RunOptions) -> Result<(ScanOutcome, RunManifest)> {
    let mut s = Session::open(SCAN, config, opts)?;
    std::fs::write(s.dir.join(INPUT_PULSE_FILE), serde_json::to_string(pulse)?)?;
    s.manifest.input_pulse = Some(INPUT_PULSE_FILE.into());
    s.manifest.save(&s.dir.join(MANIFEST_FILE))?;
    let exchanges = steps::run_scan(config, config.step2.target, pulse, &mut s.recorder)?;
    let reports = steps::build_reports(config, &exchanges)?;
    for r in &reports {
        r.write(&s.dir.join(report_file(r)))?;
    }
    let best = exchanges
        .iter()
        .map(|(_, r)| (r.fom, r.std_error))
        .fold((f64::INFINITY, 0.0), |a, b| if b.0 < a.0 { b } else { a });
    let summary = RunSummary {
        best_fom: best.0,
        best_std_error: best.1,
        evaluations: exchanges.len(),
        details: serde_json::json!({ "reports": reports.iter().map(report_file).collect::<Vec<_>>() }),
    };
    let manifest = s.finish(summary)?;
    Ok((ScanOutcome { reports }, manifest))
}

/// Rebuild the sensitivity tables of a finished scan from its log.
pub fn report(run_dir: &Path) -> Result<Vec<SensitivityReport>> {
    let manifest = RunManifest::load(&run_dir.join(MANIFEST_FILE))?;
    if manifest.step != SCAN {
        return Err(Error::Config(format!("{} holds a {} run, not a scan", run_dir.display(), manifest.step)));
    }
    let (records, _) = read_log(&run_dir.join(&manifest.log))?;
    let exchanges: Vec<_> = records
        .into_iter()
        .filter_map(|r| match r {
            LogRecord::Evaluation { request, response, .. } => Some((request, response)),
            LogRecord::Superiteration { .. } => None,
        })
        .collect();
    steps::build_reports(&manifest.config, &exchanges)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub step: String,
    pub evaluations: usize,
    pub replayed_evaluations: usize,
    /// Id of the first request or response that differs, if any.
    pub first_mismatch: Option<u64>,
    pub original_fom: f64,
    pub replayed_fom: f64,
}

impl ReplayReport {
    pub fn identical(&self) -> bool {
        self.first_mismatch.is_none()
            && self.evaluations == self.replayed_evaluations
            && self.original_fom.to_bits() == self.replayed_fom.to_bits()
    }
}

fn evaluations(path: &Path) -> Result<Vec<(super::protocol::EvalRequest, super::protocol::EvalResponse)>> {
    Ok(read_log(path)?
        .0
        .into_iter()
        .filter_map(|r| match r {
            LogRecord::Evaluation { request, response, .. } => Some((request, response)),
            LogRecord::Superiteration { .. } => None,
        })
        .collect())
}

/// Re-run the step recorded in `run_dir` from its manifest alone, into
/// `out`, and compare every exchange bit for bit.
pub fn replay(run_dir: &Path, out: &Path, endpoint: Option<String>) -> Result<ReplayReport> {
    let manifest = RunManifest::load(&run_dir.join(MANIFEST_FILE))?;
    let config = &manifest.config;
    let opts = RunOptions {
        out: out.to_path_buf(),
        endpoint,
        config_path: manifest.config_path.clone(),
        ..RunOptions::default()
    };
    let replayed = match manifest.step.as_str() {
        STEP1 => execute_step1(config, &opts)?.1,
        STEP2 => execute_step2(config, &opts)?.1,
        SCAN => {
            let input = manifest
                .input_pulse
                .as_ref()
                .ok_or_else(|| Error::Config("scan manifest names no input pulse".into()))?;
            execute_scan(config, &load_pulse(&run_dir.join(input))?, &opts)?.1
        }
        other => return Err(Error::Config(format!("unknown step `{other}` in manifest"))),
    };
    let a = evaluations(&run_dir.join(&manifest.log))?;
    let b = evaluations(&out.join(&replayed.log))?;
    let first_mismatch = a
        .iter()
        .zip(&b)
        .find(|((qa, ra), (qb, rb))| qa != qb || !ra.same_result(rb))
        .map(|((q, _), _)| q.id);
    let fom = |m: &RunManifest| m.summary.as_ref().map_or(f64::NAN, |s| s.best_fom);
    Ok(ReplayReport {
        step: manifest.step.clone(),
        evaluations: a.len(),
        replayed_evaluations: b.len(),
        first_mismatch,
        original_fom: fom(&manifest),
        replayed_fom: fom(&replayed),
    })
}
