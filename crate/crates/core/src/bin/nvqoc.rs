use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use nvqoc::protocols::AmplitudeScan;
use nvqoc::runner::{self, RunConfig, RunOptions, Step1Outcome, Target};

#[derive(Parser)]
#[command(name = "nvqoc", version, about = "Closed-loop pulse optimization for NV-center magnetometry")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration; defaults apply to anything left out.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Clone)]
struct Client {
    #[command(flatten)]
    common: Common,
    /// Experiment server `host:port`; the built-in simulator if absent.
    #[arg(long)]
    endpoint: Option<String>,
    /// Run directory for manifest, log and outputs.
    #[arg(long, short)]
    out: PathBuf,
    /// Shots per evaluation; 0 for expected (noiseless) counts.
    #[arg(long)]
    shots: Option<u64>,
    /// Continue an interrupted run in `--out` from its log.
    #[arg(long)]
    resume: bool,
    /// Socket read timeout in seconds.
    #[arg(long, default_value_t = 600.0)]
    timeout: f64,
}

#[derive(Subcommand)]
enum Command {
    /// Serve the simulated experiment over TCP (newline-delimited JSON).
    Serve {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "127.0.0.1:7878")]
        addr: String,
    },
    /// Optimize the laser readout settings.
    Step1 {
        #[command(flatten)]
        client: Client,
    },
    /// Optimize a robust control pulse with dCRAB.
    Step2 {
        #[command(flatten)]
        client: Client,
        /// `podmr` (inversion) or `gate` (π/2 gate).
        #[arg(long)]
        target: Option<String>,
        /// Apply the readout settings found by a step-1 run directory.
        #[arg(long)]
        readout_from: Option<PathBuf>,
    },
    /// Measure spectra or fringes of a pulse and tabulate sensitivities.
    Scan {
        #[command(flatten)]
        client: Client,
        /// Pulse file (`.json` or columnar text); a step-2 run directory also works.
        #[arg(long)]
        pulse: PathBuf,
        #[arg(long)]
        target: Option<String>,
        /// Amplitude scales as `lo:hi:count`.
        #[arg(long)]
        scales: Option<String>,
    },
    /// Print the sensitivity tables of a finished scan.
    Report { run_dir: PathBuf },
    /// Re-run a recorded step from its manifest and compare bit for bit.
    Replay {
        run_dir: PathBuf,
        #[arg(long, short)]
        out: Option<PathBuf>,
        #[arg(long)]
        endpoint: Option<String>,
    },
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut config = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn options(client: &Client) -> RunOptions {
    RunOptions {
        out: client.out.clone(),
        endpoint: client.endpoint.clone(),
        resume: client.resume,
        config_path: client.common.config.as_ref().map(|p| p.display().to_string()),
        timeout: Some(Duration::from_secs_f64(client.timeout)),
    }
}

fn shots(s: Option<u64>) -> Option<Option<u64>> {
    s.map(|n| (n > 0).then_some(n))
}

fn parse_target(s: &str) -> Result<Target> {
    match s {
        "podmr" => Ok(Target::Podmr),
        "gate" => Ok(Target::Gate),
        _ => bail!("unknown target `{s}`; expected podmr or gate"),
    }
}

fn parse_scales(s: &str) -> Result<AmplitudeScan> {
    let parts: Vec<&str> = s.split(':').collect();
    let [lo, hi, n] = parts[..] else {
        bail!("scales must be lo:hi:count, got `{s}`");
    };
    Ok(AmplitudeScan::uniform(lo.parse()?, hi.parse()?, n.parse()?)?)
}

fn pulse_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(runner::run::PULSE_JSON)
    } else {
        p.to_path_buf()
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Serve { common, addr } => {
            let config = load_config(&common)?;
            let listener = TcpListener::bind(&addr).with_context(|| format!("binding {addr}"))?;
            eprintln!("serving on {} (protocol v{})", listener.local_addr()?, runner::PROTOCOL_VERSION);
            runner::serve(listener, runner::experiment_for(&config)?)?;
        }
        Command::Step1 { client } => {
            let mut config = load_config(&client.common)?;
            if let Some(s) = shots(client.shots) {
                config.step1.shots = s;
            }
            let (outcome, _) = runner::execute_step1(&config, &options(&client))?;
            print!("{}", runner::steps::step1_table(&outcome));
        }
        Command::Step2 {
            client,
            target,
            readout_from,
        } => {
            let mut config = load_config(&client.common)?;
            if let Some(s) = shots(client.shots) {
                config.step2.shots = s;
            }
            if let Some(t) = target {
                config.step2.target = parse_target(&t)?;
            }
            if let Some(dir) = readout_from {
                let text = std::fs::read_to_string(dir.join("step1.json"))?;
                let step1: Step1Outcome = serde_json::from_str(&text)?;
                config.step2.readout = Some(step1.params);
            }
            let (outcome, _) = runner::execute_step2(&config, &options(&client))?;
            println!("baseline_fom\t{:.6}", outcome.baseline_fom);
            for (k, f) in outcome.result.superiteration_trace().iter().enumerate() {
                println!("superiteration_{k}\t{f:.6}");
            }
            println!("best_fom\t{:.6} ± {:.1e}", outcome.result.best_fom, outcome.result.best_std_error);
            println!("pulse\t{}", client.out.join(runner::run::PULSE_TSV).display());
        }
        Command::Scan {
            client,
            pulse,
            target,
            scales,
        } => {
            let mut config = load_config(&client.common)?;
            if let Some(s) = shots(client.shots) {
                config.scan.shots = s;
            }
            if let Some(t) = target {
                config.step2.target = parse_target(&t)?;
            }
            if let Some(s) = scales {
                config.scan.scales = parse_scales(&s)?;
            }
            let pulse_file = pulse_path(&pulse);
            let pulse = runner::load_pulse(&pulse_file).with_context(|| format!("reading pulse {}", pulse_file.display()))?;
            let (outcome, _) = runner::execute_scan(&config, &pulse, &options(&client))?;
            for r in &outcome.reports {
                print!("{}", r.to_tsv());
            }
        }
        Command::Report { run_dir } => {
            for r in runner::report(&run_dir).with_context(|| format!("reading run {}", run_dir.display()))? {
                print!("{}", r.to_tsv());
            }
        }
        Command::Replay { run_dir, out, endpoint } => {
            let out = out.unwrap_or_else(|| run_dir.join("replay"));
            let r = runner::replay(&run_dir, &out, endpoint).with_context(|| format!("replaying run {}", run_dir.display()))?;
            println!(
                "{} evaluations {}/{}, fom {:e} vs {:e}",
                r.step, r.replayed_evaluations, r.evaluations, r.replayed_fom, r.original_fom
            );
            match r.first_mismatch {
                None if r.identical() => println!("replay identical"),
                None => bail!("replay differs in length or final FoM"),
                Some(id) => bail!("replay differs from request {id} on"),
            }
        }
    }
    Ok(())
}
