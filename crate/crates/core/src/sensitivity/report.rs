use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// One scan point of a sensitivity table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    /// Scan coordinate: amplitude scale or drive detuning (Hz).
    pub x: f64,
    pub contrast: f64,
    /// Fitted FWHM (Hz) for pulsed ODMR, `T2*` (s) for Ramsey.
    pub width: f64,
    /// `None` when the point has no positive contrast.
    pub eta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    /// `"podmr"` or `"ramsey"`.
    pub protocol: String,
    /// Name of the scan coordinate, e.g. `"scale"` or `"detuning_hz"`.
    pub axis: String,
    /// How `t_m` was formed, e.g. `"t_m = t_w + 2*t_i"`.
    pub t_m_convention: String,
    pub rows: Vec<ReportRow>,
}

impl SensitivityReport {
    pub fn new(protocol: &str, axis: &str, t_m_convention: &str) -> Self {
        Self {
            protocol: protocol.into(),
            axis: axis.into(),
            t_m_convention: t_m_convention.into(),
            rows: Vec::new(),
        }
    }

    pub fn to_tsv(&self) -> String {
        let width = if self.protocol == "ramsey" { "t2_star_s" } else { "fwhm_hz" };
        let mut s = format!(
            "# protocol = {}\n# {}\n{}\tcontrast\t{}\teta_t_per_sqrt_hz\n",
            self.protocol, self.t_m_convention, self.axis, width
        );
        for r in &self.rows {
            let eta = r.eta.map_or_else(|| "nan".to_string(), |e| format!("{e:.6e}"));
            let _ = writeln!(s, "{:.6e}\t{:.6e}\t{:.6e}\t{eta}", r.x, r.contrast, r.width);
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tsv_layout() {
        let mut r = SensitivityReport::new("ramsey", "scale", "t_m = t_w + 2*t_i");
        r.rows.push(ReportRow {
            x: 0.5,
            contrast: 0.2,
            width: 1e-6,
            eta: None,
        });
        let tsv = r.to_tsv();
        let lines: Vec<&str> = tsv.lines().collect();
        assert_eq!(lines[2], "scale\tcontrast\tt2_star_s\teta_t_per_sqrt_hz");
        assert_eq!(lines[3].split('\t').count(), 4);
        assert!(lines[3].ends_with("nan"));
    }
}
