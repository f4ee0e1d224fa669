use std::f64::consts::TAU;
use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::time::Duration;

use proptest::prelude::*;

use nvqoc::model::{NvModel, ReadoutModel};
use nvqoc::photophysics::ReadoutParams;
use nvqoc::protocols::AmplitudeScan;
use nvqoc::runner::log::read_log;
use nvqoc::runner::run::{execute_scan, report};
use nvqoc::runner::steps::{self, step1_space};
use nvqoc::runner::*;
use nvqoc::spin::{decompose, half_pi_x_distance, propagate};
use nvqoc::Error;

fn readout_request(id: u64, shots: Option<u64>) -> EvalRequest {
    EvalRequest::new(
        id,
        shots,
        Payload::ReadoutParams {
            params: ReadoutParams::initial_guess(10.0),
            repetitions: 10,
        },
    )
}

fn ideal_config() -> RunConfig {
    RunConfig {
        model: NvModel::ideal(TAU * 10e6),
        ..RunConfig::default()
    }
}

fn planted() -> PlantedReadout {
    PlantedReadout::new(ReadoutParams {
        laser_power_mw: 24.0,
        laser_duration_ns: 1350.0,
        readout_window_ns: 520.0,
        wait_time_ns: 620.0,
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn readout_requests_round_trip(
        id in any::<u64>(),
        shots in proptest::option::of(1u64..1_000_000),
        p in 2.0f64..40.0, d in 300.0f64..2000.0, f in 0.25f64..0.75, w in 0.0f64..1000.0,
    ) {
        let req = EvalRequest::new(id, shots, Payload::ReadoutParams {
            params: ReadoutParams { laser_power_mw: p, laser_duration_ns: d, readout_window_ns: f * d, wait_time_ns: w },
            repetitions: 7,
        });
        let line = serde_json::to_string(&req).unwrap();
        prop_assert_eq!(EvalRequest::parse(&line).unwrap(), req);
    }

    #[test]
    fn pulse_requests_round_trip(samples in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..40)) {
        let rabi = TAU * 10e6;
        let samples: Vec<[f64; 2]> = samples.iter().map(|(a, b)| [a * rabi * 0.7, b * rabi * 0.7]).collect();
        let pulse = nvqoc::spin::ControlPulse::new(samples, 1e-9).unwrap();
        let req = EvalRequest::new(3, None, Payload::PodmrFom {
            pulse,
            scan: AmplitudeScan::default(),
            drive_detuning: 0.0,
            readout: None,
        });
        let line = serde_json::to_string(&req).unwrap();
        prop_assert_eq!(EvalRequest::parse(&line).unwrap(), req);
    }
}

#[test]
fn malformed_requests_name_the_field() {
    let exp = experiment_for(&RunConfig::default()).unwrap();
    let cases = [
        (
            r#"{"version":1,"id":4,"kind":"readout_params","payload":{"params":{"laser_power_mw":10.0,"laser_duration_ns":1000.0,"readout_window_ns":450.0}}}"#,
            "payload.params.wait_time_ns",
        ),
        (
            r#"{"version":1,"id":4,"kind":"readout_params","payload":{"params":{"laser_power_mw":"ten","laser_duration_ns":1000.0,"readout_window_ns":450.0,"wait_time_ns":1.0}}}"#,
            "payload.params.laser_power_mw",
        ),
        (r#"{"version":1,"id":4,"kind":"teleport","payload":{}}"#, "kind"),
        (r#"{"version":1,"id":4,"kind":"readout_params","payload":{"params":null},"extra":1}"#, "extra"),
        (
            r#"{"version":1,"id":4,"kind":"podmr_fom","payload":{"pulse":{"samples":[[1e12,0.0]],"dt":1e-9},"scan":[1.0]}}"#,
            "payload.pulse",
        ),
        (
            r#"{"version":1,"id":4,"kind":"podmr_fom","payload":{"pulse":{"samples":[[1.0,0.0]],"dt":-1.0},"scan":[1.0]}}"#,
            "payload.pulse",
        ),
    ];
    for (line, field) in cases {
        match handle_line(&exp, line) {
            ServerMessage::Error(e) => {
                assert_eq!(e.id, Some(4), "{line}");
                assert!(
                    e.field.as_deref().is_some_and(|f| f.starts_with(field)),
                    "{line}: expected {field}, got {:?} ({})",
                    e.field,
                    e.message
                );
            }
            ServerMessage::Response(r) => panic!("{line} accepted: {r:?}"),
        }
    }
    let ServerMessage::Error(e) = handle_line(&exp, "not json") else {
        panic!("garbage accepted");
    };
    assert_eq!(e.id, None);
}

#[test]
fn version_and_shot_checks() {
    let exp = experiment_for(&RunConfig::default()).unwrap();
    let mut req = readout_request(1, Some(10_000));
    req.version = 99;
    assert!(exp.evaluate(&req).is_err());
    let req = readout_request(1, Some(0));
    assert_eq!(exp.evaluate(&req).unwrap_err().field.as_deref(), Some("shots"));
}

#[test]
fn responses_are_deterministic_per_id() {
    let config = RunConfig::default();
    let a = experiment_for(&config).unwrap();
    let b = experiment_for(&config).unwrap();
    let r1 = a.evaluate(&readout_request(5, Some(10_000))).unwrap();
    let r2 = b.evaluate(&readout_request(5, Some(10_000))).unwrap();
    assert!(r1.same_result(&r2));
    let r3 = a.evaluate(&readout_request(6, Some(10_000))).unwrap();
    assert_ne!(r1.fom, r3.fom, "different ids should draw different noise");
    assert_eq!(r1.seed, Some(request_seed(config.seed, 5)));
}

#[test]
fn loopback_matches_direct_evaluation() {
    let config = RunConfig::default();
    let exp = experiment_for(&config).unwrap();
    let mut loopback = Loopback::new(experiment_for(&config).unwrap());
    let req = readout_request(9, Some(20_000));
    assert!(exp.evaluate(&req).unwrap().same_result(&loopback.evaluate(&req).unwrap()));
}

#[test]
fn tcp_server_survives_bad_clients() {
    let config = RunConfig::default();
    let (addr, _server) = spawn_server("127.0.0.1:0", experiment_for(&config).unwrap()).unwrap();
    let timeout = Some(Duration::from_secs(30));

    // a client that sends garbage and hangs up mid-line
    {
        let mut s = TcpStream::connect(addr).unwrap();
        s.write_all(b"{\"version\":1,\"id\"\n").unwrap();
        let mut reply = String::new();
        BufReader::new(s.try_clone().unwrap()).read_line(&mut reply).unwrap();
        assert!(reply.contains("\"type\":\"error\""), "{reply}");
        s.write_all(b"{\"half").unwrap();
    }

    let mut a = TcpClient::connect(addr, timeout).unwrap();
    let mut b = TcpClient::connect(addr, timeout).unwrap();
    let ra = a.evaluate(&readout_request(1, Some(10_000))).unwrap();
    let rb = b.evaluate(&readout_request(1, Some(10_000))).unwrap();
    assert!(ra.same_result(&rb));
    let direct = experiment_for(&config).unwrap().evaluate(&readout_request(1, Some(10_000))).unwrap();
    assert!(ra.same_result(&direct));

    // server-side rejection surfaces as a remote error with the field path
    let mut bad = readout_request(2, Some(10_000));
    if let Payload::ReadoutParams { params, .. } = &mut bad.payload {
        params.laser_power_mw = 100.0;
    }
    match a.evaluate(&bad) {
        Err(Error::Remote { field, .. }) => assert!(field.unwrap().starts_with("payload.params")),
        other => panic!("expected a remote error, got {other:?}"),
    }
    assert!(a.evaluate(&readout_request(3, Some(10_000))).is_ok());
}

#[test]
fn step1_never_leaves_the_bounds() {
    let config = RunConfig {
        backend: Backend::Planted(planted()),
        ..RunConfig::default()
    };
    let mut t = Loopback::new(experiment_for(&config).unwrap());
    let o = steps::run_step1(&config, &mut t).unwrap();
    let space = step1_space().unwrap();
    assert!(o.state.history.iter().all(|h| space.contains(&h.x)));
    assert!(o.fom < o.initial_fom);
}

#[test]
fn interrupted_step1_resumes_to_the_same_result() {
    let dir = tempfile::tempdir().unwrap();
    let config = RunConfig {
        backend: Backend::Planted(planted()),
        ..RunConfig::default()
    };
    let full = dir.path().join("full");
    let (reference, _) = execute_step1(&config, &RunOptions::new(&full)).unwrap();

    // keep half the log and a torn line, as a crash mid-write would
    let cut = dir.path().join("cut");
    std::fs::create_dir_all(&cut).unwrap();
    let text = std::fs::read_to_string(full.join(LOG_FILE)).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let mut partial: String = lines[..lines.len() / 2].iter().map(|l| format!("{l}\n")).collect();
    partial.push_str(&lines[lines.len() / 2][..20]);
    std::fs::write(cut.join(LOG_FILE), partial).unwrap();
    std::fs::copy(full.join(MANIFEST_FILE), cut.join(MANIFEST_FILE)).unwrap();

    let opts = RunOptions {
        resume: true,
        ..RunOptions::new(&cut)
    };
    let (resumed, _) = execute_step1(&config, &opts).unwrap();
    assert_eq!(resumed.params, reference.params);
    assert_eq!(resumed.fom.to_bits(), reference.fom.to_bits());
    let (a, _) = read_log(&full.join(LOG_FILE)).unwrap();
    let (b, _) = read_log(&cut.join(LOG_FILE)).unwrap();
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        match (x, y) {
            (
                LogRecord::Evaluation { request: qa, response: ra, .. },
                LogRecord::Evaluation { request: qb, response: rb, .. },
            ) => assert!(qa == qb && ra.same_result(rb), "log differs at request {}", qa.id),
            _ => panic!("unexpected record"),
        }
    }

    // a changed config must not silently reuse the log
    let other = RunConfig { seed: 2, ..config };
    assert!(execute_step1(&other, &opts).is_err());
}

#[test]
fn step2_recovers_inversion_from_a_weak_guess() {
    let mut config = ideal_config();
    let s2 = &mut config.step2;
    s2.pulse_duration_ns = 100.0;
    s2.guess_amplitude = 0.8;
    s2.scan = AmplitudeScan::single(1.0).unwrap();
    s2.n_set = 2;
    s2.max_superiterations = 3;
    s2.max_evaluations = 300;
    s2.tol_f = 1e-10;
    let mut t = Loopback::new(experiment_for(&config).unwrap());
    let o = steps::run_step2(&config, &mut t).unwrap();
    let u = propagate(&config.model.hamiltonian(0.0), o.pulse(), 1.0).unwrap();
    assert!(1.0 - u.transfer() < 1e-3, "infidelity {}", 1.0 - u.transfer());
    assert!(o.pulse().peak_amplitude() <= config.model.rabi_max * (1.0 + 1e-12));
}

#[test]
fn gate_target_lands_on_the_half_pi_manifold() {
    let mut config = ideal_config();
    config.model.readout = ReadoutModel::Ideal { bright: 1.0, dark: 0.7 };
    let s2 = &mut config.step2;
    s2.target = Target::Gate;
    s2.pulse_duration_ns = 50.0;
    s2.guess_amplitude = 0.3;
    s2.scan = AmplitudeScan::single(1.0).unwrap();
    s2.n_set = 2;
    s2.max_superiterations = 3;
    s2.max_evaluations = 300;
    s2.tol_f = 1e-10;
    let mut t = Loopback::new(experiment_for(&config).unwrap());
    let o = steps::run_step2(&config, &mut t).unwrap();
    let u = propagate(&config.model.hamiltonian(0.0), o.pulse(), 1.0).unwrap();
    let c = decompose(&u).unwrap();
    assert!(half_pi_x_distance(c.coefficients) < 5e-2, "{:?} fom {}", c, o.result.best_fom);
}

#[test]
fn step2_run_replays_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = ideal_config();
    config.step2.pulse_duration_ns = 60.0;
    config.step2.n_set = 2;
    config.step2.max_superiterations = 2;
    config.step2.max_evaluations = 40;
    config.step2.tol_super = 0.0;
    let run = dir.path().join("run");
    let (outcome, manifest) = execute_step2(&config, &RunOptions::new(&run)).unwrap();
    assert_eq!(manifest.summary.unwrap().best_fom, outcome.result.best_fom);
    assert!(run.join("pulse.tsv").exists() && run.join("pulse.json").exists());
    let pulse = load_pulse(&run.join("pulse.json")).unwrap();
    assert_eq!(&pulse, outcome.pulse());

    let r = replay(&run, &dir.path().join("again"), None).unwrap();
    assert!(r.identical(), "{r:?}");
    let (records, _) = read_log(&run.join(LOG_FILE)).unwrap();
    let superiterations = records
        .iter()
        .filter(|r| matches!(r, LogRecord::Superiteration { .. }))
        .count();
    assert_eq!(superiterations, 2);
}

#[test]
fn scan_reports_rebuild_from_the_log() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = RunConfig::default();
    config.step2.target = Target::Gate;
    config.scan.scales = AmplitudeScan::new(vec![0.5, 1.0]).unwrap();
    config.scan.taus_s.count = 151;
    config.scan.ramsey_detunings_hz.count = 3;
    let pulse = config.model.rectangular(std::f64::consts::FRAC_PI_2);
    let run = dir.path().join("scan");
    let (outcome, _) = execute_scan(&config, &pulse, &RunOptions::new(&run)).unwrap();
    assert_eq!(outcome.reports.len(), 2);
    assert_eq!(outcome.reports[0].rows.len(), 2);
    assert_eq!(outcome.reports[1].rows.len(), 3);
    let full = &outcome.reports[0].rows[1];
    assert!((full.width / 2e-6 - 1.0).abs() < 0.05, "T2* {}", full.width);
    assert!(full.eta.is_some_and(|e| e > 0.0));
    assert_eq!(report(&run).unwrap(), outcome.reports);
}

#[test]
fn podmr_scan_fits_the_dip_width() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = RunConfig::default();
    config.scan.scales = AmplitudeScan::single(1.0).unwrap();
    let pulse = config.model.rectangular(std::f64::consts::PI);
    let (outcome, _) = execute_scan(&config, &pulse, &RunOptions::new(dir.path())).unwrap();
    let row = &outcome.reports[0].rows[0];
    // a 50 ns rectangular π pulse has a line roughly 1/T_π wide
    assert!(row.width > 5e6 && row.width < 40e6, "FWHM {} Hz", row.width);
    assert!(row.contrast > 0.0 && row.eta.is_some());
}
