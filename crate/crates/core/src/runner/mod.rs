//! Closed-loop runner: wire protocol, simulated experiment server, transports,
//! run logs and the step drivers.

pub mod config;
pub mod experiment;
pub mod log;
pub mod protocol;
pub mod run;
pub mod steps;
pub mod transport;

pub use config::{Grid, RunConfig, ScanConfig, Step1Config, Step2Config, Target};
pub use experiment::{Backend, Experiment, PlantedReadout, RequestError};
pub use log::{read_log, LogRecord, Recorder, RunLog, RunManifest, RunSummary, LOG_FILE, MANIFEST_FILE};
pub use protocol::{request_seed, ErrorResponse, EvalRequest, EvalResponse, Payload, RawData, ServerMessage, PROTOCOL_VERSION};
pub use transport::{handle_line, serve, spawn_server, Loopback, TcpClient, Transport};
pub use run::{execute_scan, execute_step1, execute_step2, experiment_for, load_pulse, replay, report, ReplayReport, RunOptions, ScanOutcome};
pub use steps::{Step1Outcome, Step2Outcome};
