//! Columnar pulse files: `t_ns u1 u2`, amplitudes as a fraction of `Ω_max`.
//!
//! ```text
//! # nvqoc pulse v1
//! # rabi_max_rad_s = 6.28318531e7
//! # dt_ns = 5.00000000e-1
//! # t_ns u1 u2
//! 0.00000000e0 1.00000000e0 0.00000000e0
//! ```

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::spin::ControlPulse;

const MAGIC: &str = "# nvqoc pulse v1";

#[derive(Debug, Clone, PartialEq)]
pub struct PulseFile {
    pub pulse: ControlPulse,
    pub rabi_max: f64,
}

pub fn write_pulse<W: Write>(mut out: W, pulse: &ControlPulse, rabi_max: f64) -> Result<()> {
    writeln!(out, "{MAGIC}")?;
    writeln!(out, "# rabi_max_rad_s = {rabi_max:.8e}")?;
    writeln!(out, "# dt_ns = {:.8e}", pulse.dt() * 1e9)?;
    writeln!(out, "# t_ns u1 u2")?;
    for (k, s) in pulse.samples().iter().enumerate() {
        let t = k as f64 * pulse.dt() * 1e9;
        writeln!(out, "{:.8e} {:.8e} {:.8e}", t, s[0] / rabi_max, s[1] / rabi_max)?;
    }
    Ok(())
}

fn header_value(line: &str, key: &str) -> Option<f64> {
    let rest = line.strip_prefix('#')?.trim().strip_prefix(key)?.trim();
    rest.strip_prefix('=')?.trim().parse().ok()
}

pub fn read_pulse<R: BufRead>(input: R) -> Result<PulseFile> {
    let mut rabi_max = None;
    let mut dt_ns = None;
    let mut samples = Vec::new();
    let mut seen_magic = false;
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('#') {
            seen_magic |= line == MAGIC;
            if let Some(v) = header_value(line, "rabi_max_rad_s") {
                rabi_max = Some(v);
            }
            if let Some(v) = header_value(line, "dt_ns") {
                dt_ns = Some(v);
            }
            continue;
        }
        let cols: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::InvalidPulse(format!("line {}: {e}", lineno + 1)))?;
        if cols.len() != 3 {
            return Err(Error::InvalidPulse(format!(
                "line {}: expected 3 columns, got {}",
                lineno + 1,
                cols.len()
            )));
        }
        samples.push([cols[1], cols[2]]);
    }
    if !seen_magic {
        return Err(Error::InvalidPulse("missing pulse file header".into()));
    }
    let rabi_max = rabi_max.ok_or_else(|| Error::InvalidPulse("missing rabi_max_rad_s".into()))?;
    let dt = dt_ns.ok_or_else(|| Error::InvalidPulse("missing dt_ns".into()))? * 1e-9;
    let samples = samples
        .into_iter()
        .map(|[a, b]| [a * rabi_max, b * rabi_max])
        .collect();
    Ok(PulseFile {
        pulse: ControlPulse::new(samples, dt)?,
        rabi_max,
    })
}
