//! Newline-delimited JSON messages exchanged between optimizer client and
//! experiment server. Every line is one self-contained record.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::photophysics::{ReadoutCounts, ReadoutParams};
use crate::protocols::{AmplitudeScan, Fringe, ScalePoint, Spectrum};
use crate::spin::ControlPulse;

pub const PROTOCOL_VERSION: u32 = 1;

fn default_repetitions() -> usize {
    10
}

/// What the server is asked to measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case", deny_unknown_fields)]
pub enum Payload {
    /// Two-shot readout with an inversion pulse; FoM_RO.
    ReadoutParams {
        params: ReadoutParams,
        /// Blocks the shot budget is split into for the variance term.
        #[serde(default = "default_repetitions")]
        repetitions: usize,
    },
    PodmrFom {
        pulse: ControlPulse,
        scan: AmplitudeScan,
        /// rad/s.
        #[serde(default)]
        drive_detuning: f64,
        #[serde(default)]
        readout: Option<ReadoutParams>,
    },
    RamseyGateFom {
        pulse: ControlPulse,
        scan: AmplitudeScan,
        #[serde(default)]
        drive_detuning: f64,
        /// π_x reference; the server's calibrated rectangular π pulse if absent.
        #[serde(default)]
        reference: Option<ControlPulse>,
        #[serde(default)]
        readout: Option<ReadoutParams>,
    },
    Spectrum {
        pulse: ControlPulse,
        scan: AmplitudeScan,
        /// rad/s.
        detunings: Vec<f64>,
        #[serde(default)]
        readout: Option<ReadoutParams>,
    },
    Fringe {
        /// The π/2 pulse applied before and after free precession.
        pulse: ControlPulse,
        scale: f64,
        /// s.
        taus: Vec<f64>,
        #[serde(default)]
        drive_detuning: f64,
        #[serde(default)]
        readout: Option<ReadoutParams>,
    },
}

impl Payload {
    pub fn kind(&self) -> &'static str {
        match self {
            Payload::ReadoutParams { .. } => "readout_params",
            Payload::PodmrFom { .. } => "podmr_fom",
            Payload::RamseyGateFom { .. } => "ramsey_gate_fom",
            Payload::Spectrum { .. } => "spectrum",
            Payload::Fringe { .. } => "fringe",
        }
    }
}

/// On the wire: `{"version", "id", "shots", "kind", "payload"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRequest {
    pub version: u32,
    pub id: u64,
    /// Shot budget `N`; absent means expected (noiseless) counts.
    #[serde(default)]
    pub shots: Option<u64>,
    #[serde(flatten)]
    pub payload: Payload,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Envelope {
    version: u32,
    id: u64,
    #[serde(default)]
    shots: Option<u64>,
    kind: String,
    payload: serde_json::Value,
}

/// A request line that could not be parsed.
#[derive(Debug, Clone, PartialEq)]
pub struct ParseError {
    pub id: Option<u64>,
    pub field: Option<String>,
    pub message: String,
}

fn path_error<E: std::fmt::Display>(e: serde_path_to_error::Error<E>) -> (Option<String>, String) {
    let path = e.path().to_string();
    let message = e.into_inner().to_string();
    // serde reports missing and unknown fields at the enclosing object
    let named = ["missing field `", "unknown field `"]
        .iter()
        .find_map(|p| message.strip_prefix(p))
        .and_then(|rest| rest.split('`').next());
    let field = match (path.as_str(), named) {
        (".", Some(n)) => Some(n.to_string()),
        (".", None) => None,
        (p, Some(n)) => Some(format!("{p}.{n}")),
        (p, None) => Some(p.to_string()),
    };
    (field, message)
}

impl EvalRequest {
    /// Parse one request line, reporting the path of the first offending field.
    pub fn parse(line: &str) -> std::result::Result<Self, ParseError> {
        let value: serde_json::Value = serde_json::from_str(line).map_err(|e| ParseError {
            id: None,
            field: None,
            message: format!("malformed JSON: {e}"),
        })?;
        let id = value.get("id").and_then(|v| v.as_u64());
        let env: Envelope = serde_path_to_error::deserialize(&value).map_err(|e| {
            let (field, message) = path_error(e);
            ParseError { id, field, message }
        })?;
        let tagged = serde_json::json!({ "kind": env.kind, "payload": env.payload });
        let payload: Payload = serde_path_to_error::deserialize(&tagged).map_err(|e| {
            let (field, message) = path_error(e);
            ParseError {
                id,
                field: field.or_else(|| Some("kind".into())),
                message,
            }
        })?;
        Ok(Self {
            version: env.version,
            id: env.id,
            shots: env.shots,
            payload,
        })
    }

    pub fn new(id: u64, shots: Option<u64>, payload: Payload) -> Self {
        Self {
            version: PROTOCOL_VERSION,
            id,
            shots,
            payload,
        }
    }
}

/// Raw measurement data behind a FoM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RawData {
    Readout { counts: Option<ReadoutCounts>, contrast: f64 },
    Points { points: Vec<ScalePoint> },
    Spectrum { spectrum: Spectrum },
    Fringe { fringe: Fringe },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResponse {
    pub version: u32,
    pub id: u64,
    pub fom: f64,
    pub std_error: f64,
    /// Seed the server derived for this request; absent for noiseless runs.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub raw: Option<RawData>,
    /// Wall time spent evaluating, µs. Not part of the reproducible content.
    #[serde(default)]
    pub server_time_us: u64,
}

impl EvalResponse {
    /// Equality on everything except timing.
    pub fn same_result(&self, other: &Self) -> bool {
        self.id == other.id
            && self.fom.to_bits() == other.fom.to_bits()
            && self.std_error.to_bits() == other.std_error.to_bits()
            && self.seed == other.seed
            && self.raw == other.raw
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub version: u32,
    /// Echoed when the request got far enough to be identified.
    #[serde(default)]
    pub id: Option<u64>,
    /// Dotted path of the offending field, when known.
    #[serde(default)]
    pub field: Option<String>,
    pub message: String,
}

/// Anything the server writes back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Response(EvalResponse),
    Error(ErrorResponse),
}

/// Per-request seed: stream `id` of a generator keyed by the master seed, so
/// the seed depends on nothing but `(master, id)`.
pub fn request_seed(master: u64, id: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(id);
    rng.next_u64()
}
