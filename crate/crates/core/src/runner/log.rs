//! Append-only JSONL run log, which doubles as the resume checkpoint, and the
//! run manifest.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::protocol::{EvalRequest, EvalResponse, PROTOCOL_VERSION};
use super::transport::Transport;
use crate::error::{Error, Result};
use crate::optimizer::SuperiterationRecord;

pub const LOG_FILE: &str = "log.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogRecord {
    Evaluation {
        step: String,
        request: EvalRequest,
        response: EvalResponse,
    },
    Superiteration {
        step: String,
        record: SuperiterationRecord,
    },
}

/// Parse a log, ignoring a torn final line left by an interrupted write.
/// Returns the records and the byte length of the intact prefix.
pub fn read_log(path: &Path) -> Result<(Vec<LogRecord>, u64)> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    let mut good = 0u64;
    let mut line = String::new();
    loop {
        line.clear();
        let n = reader.read_line(&mut line)?;
        if n == 0 {
            break;
        }
        if !line.ends_with('\n') {
            break;
        }
        match serde_json::from_str::<LogRecord>(line.trim_end()) {
            Ok(r) => records.push(r),
            Err(e) => {
                // only the last line may be damaged
                let mut rest = String::new();
                if reader.read_line(&mut rest)? == 0 {
                    break;
                }
                return Err(Error::Protocol(format!("corrupt log record at byte {good}: {e}")));
            }
        }
        good += n as u64;
    }
    Ok((records, good))
}

pub struct RunLog {
    file: File,
    path: PathBuf,
}

impl RunLog {
    /// Start a fresh log, replacing any previous one.
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path)?;
        Ok(Self {
            file,
            path: path.to_path_buf(),
        })
    }

    /// Reopen an existing log for appending, dropping a torn final line.
    pub fn resume(path: &Path) -> Result<(Self, Vec<LogRecord>)> {
        let (records, good) = read_log(path)?;
        OpenOptions::new().write(true).open(path)?.set_len(good)?;
        let file = OpenOptions::new().append(true).open(path)?;
        let log = Self {
            file,
            path: path.to_path_buf(),
        };
        Ok((log, records))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// One record, one line, one write.
    pub fn append(&mut self, record: &LogRecord) -> Result<()> {
        let mut line = serde_json::to_string(record)?;
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.flush()?;
        Ok(())
    }
}

/// Transport wrapper that logs every exchange and answers requests already in
/// the log from the log, so an interrupted run resumes where it stopped.
pub struct Recorder<T> {
    inner: T,
    log: RunLog,
    step: String,
    cache: HashMap<u64, (EvalRequest, EvalResponse)>,
    replayed: usize,
}

impl<T: Transport> Recorder<T> {
    pub fn new(inner: T, log: RunLog, step: &str) -> Self {
        Self {
            inner,
            log,
            step: step.into(),
            cache: HashMap::new(),
            replayed: 0,
        }
    }

    pub fn with_history(mut self, records: &[LogRecord]) -> Self {
        for r in records {
            if let LogRecord::Evaluation { step, request, response } = r {
                if *step == self.step {
                    self.cache.insert(request.id, (request.clone(), response.clone()));
                }
            }
        }
        self
    }

    /// Requests answered from the log so far.
    pub fn replayed(&self) -> usize {
        self.replayed
    }

    pub fn log(&mut self) -> &mut RunLog {
        &mut self.log
    }

    pub fn into_inner(self) -> (T, RunLog) {
        (self.inner, self.log)
    }
}

impl<T: Transport> Transport for Recorder<T> {
    fn evaluate(&mut self, request: &EvalRequest) -> Result<EvalResponse> {
        if let Some((logged, response)) = self.cache.remove(&request.id) {
            if logged != *request {
                return Err(Error::Protocol(format!(
                    "request {} differs from the logged one; the run config changed",
                    request.id
                )));
            }
            self.replayed += 1;
            return Ok(response);
        }
        let response = self.inner.evaluate(request)?;
        self.log.append(&LogRecord::Evaluation {
            step: self.step.clone(),
            request: request.clone(),
            response: response.clone(),
        })?;
        Ok(response)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub best_fom: f64,
    pub best_std_error: f64,
    pub evaluations: usize,
    /// Step-specific results (optimized parameters, baseline FoM, ...).
    #[serde(default)]
    pub details: serde_json::Value,
}

/// Everything needed to re-run a step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub protocol_version: u32,
    pub step: String,
    pub seed: u64,
    /// Where the config was read from, for the record; `config` is authoritative.
    #[serde(default)]
    pub config_path: Option<String>,
    pub config: RunConfig,
    /// `None` for the in-process loopback.
    #[serde(default)]
    pub endpoint: Option<String>,
    /// Input pulse for scans, relative to the run directory.
    #[serde(default)]
    pub input_pulse: Option<String>,
    pub log: String,
    pub started_unix: u64,
    #[serde(default)]
    pub finished_unix: Option<u64>,
    #[serde(default)]
    pub summary: Option<RunSummary>,
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

impl RunManifest {
    pub fn new(step: &str, config: &RunConfig) -> Self {
        Self {
            protocol_version: PROTOCOL_VERSION,
            step: step.into(),
            seed: config.seed,
            config_path: None,
            config: config.clone(),
            endpoint: None,
            input_pulse: None,
            log: LOG_FILE.into(),
            started_unix: unix_now(),
            finished_unix: None,
            summary: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    /// Written via a temporary file so a crash never leaves half a manifest.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, serde_json::to_string_pretty(self)?)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }
}
