use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{CorrelogramResult, PeakStats};
use crate::error::Result;

/// Writes `tau_s,counts,g2,g2_err` rows; `tau_s` is the bin centre.
pub fn write_correlogram_csv<W: Write>(mut w: W, result: &CorrelogramResult) -> Result<()> {
    writeln!(w, "tau_s,counts,g2,g2_err")?;
    for i in 0..result.counts.len() {
        writeln!(w, "{:e},{},{:e},{:e}", result.binning.center(i), result.counts[i], result.g2[i], result.g2_err[i])?;
    }
    w.flush()?;
    Ok(())
}

/// JSON summary of a correlogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelogramSummary {
    pub peak_g2: f64,
    pub peak_tau_s: f64,
    pub fwhm_s: f64,
    pub total_counts: u64,
    pub singles_a: u64,
    pub singles_b: u64,
    pub duration_s: f64,
    pub bin_width_s: f64,
}

impl CorrelogramSummary {
    pub fn new(result: &CorrelogramResult, peak: PeakStats) -> Self {
        Self {
            peak_g2: peak.peak_g2,
            peak_tau_s: peak.peak_tau_s,
            fwhm_s: peak.fwhm_s,
            total_counts: result.total_counts(),
            singles_a: result.singles_a,
            singles_b: result.singles_b,
            duration_s: result.duration_s,
            bin_width_s: result.binning.bin_width_s,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correlator::BinningSpec;

    #[test]
    fn csv_columns() {
        let r = CorrelogramResult::from_counts(BinningSpec::new(1e-9, 0.0, 2e-9).unwrap(), vec![4, 0], 2, 2, 1e-9);
        let mut out = Vec::new();
        write_correlogram_csv(&mut out, &r).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "tau_s,counts,g2,g2_err");
        assert_eq!(lines[1], "5e-10,4,1e0,5e-1");
        assert_eq!(lines.len(), 3);
    }
}
