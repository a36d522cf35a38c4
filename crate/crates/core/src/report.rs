//! Run report (JSON) and CSV exports.

use std::fmt::Write as _;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::config::ScenarioConfig;
use crate::estimate::{Detection, SpectrumMatrix};
use crate::pipeline::{DesignReport, ResidualStats, SourceMatch, StageTimes};
use crate::scalar::Real;

/// Shortest decimal that parses back to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

/// `re+imj`, readable by Python's `complex()` and numpy.
pub fn fmt_complex(re: f64, im: f64) -> String {
    if im.is_sign_negative() {
        format!("{}-{}j", fmt_f64(re), fmt_f64(-im))
    } else {
        format!("{}+{}j", fmt_f64(re), fmt_f64(im))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectrumVariant {
    /// `max(Re P, 0)`.
    Plot,
    /// Complex cells.
    Raw,
}

/// First row: `angle_deg` then the frequency grid in ascending order
/// (rad/sample). Each further row: grid angle in degrees then the cells.
pub fn write_spectrum_csv<T: Real, W: Write>(spec: &SpectrumMatrix<T>, variant: SpectrumVariant, mut out: W) -> io::Result<()> {
    let order = spec.ascending_bins();
    let mut line = String::from("angle_deg");
    for &k in &order {
        line.push(',');
        line.push_str(&fmt_f64(spec.freqs[k]));
    }
    writeln!(out, "{line}")?;
    for (q, angle) in spec.angles.iter().enumerate() {
        line.clear();
        line.push_str(&fmt_f64(angle.to_degrees()));
        for &k in &order {
            let z = spec.values[(q, k)];
            let (re, im) = (z.re.to_f64_lossy(), z.im.to_f64_lossy());
            line.push(',');
            match variant {
                SpectrumVariant::Plot => line.push_str(&fmt_f64(re.max(0.0))),
                SpectrumVariant::Raw => line.push_str(&fmt_complex(re, im)),
            }
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn write_marginal_csv<T: Real, W: Write>(spec: &SpectrumMatrix<T>, mut out: W) -> io::Result<()> {
    writeln!(out, "grid_index,angle_deg,angle_rad,marginal")?;
    for (q, m) in spec.angular_marginal().into_iter().enumerate() {
        let a = spec.angles[q];
        writeln!(out, "{q},{},{},{}", fmt_f64(a.to_degrees()), fmt_f64(a), fmt_f64(m))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSummary {
    pub mode: String,
    pub estimator: String,
    pub sigma_n_hat: f64,
    pub sigma_n_configured: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSummary {
    pub angles: usize,
    pub bins: usize,
    /// `2 pi / (2N_t - 1)`; divide cells by it for a density.
    pub bin_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub design_s: f64,
    #[serde(flatten)]
    pub stages: StageTimes,
    pub write_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub version: String,
    pub config_path: String,
    pub config: ScenarioConfig,
    pub seed: u64,
    pub workers: usize,
    pub design: DesignReport,
    pub noise: NoiseSummary,
    pub lag_residuals: ResidualStats,
    pub angular_residuals: ResidualStats,
    pub spectrum: SpectrumSummary,
    pub detections: Vec<Detection>,
    /// Configured sources against the detections (simulation truth).
    pub source_matches: Vec<SourceMatch>,
    pub timings: Timings,
    pub outputs: Vec<String>,
}

/// Header and rows of a sweep.
pub const SWEEP_HEADER: &str = "parameter,value,seed,rs_rel_error,sigma_n_hat,sigma_n_rel_error,detections,hit_rate";

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub parameter: &'static str,
    pub value: usize,
    pub seed: u64,
    pub rs_rel_error: f64,
    pub sigma_n_hat: f64,
    pub sigma_n_rel_error: f64,
    pub detections: usize,
    pub hit_rate: f64,
}

impl SweepRow {
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "{},{},{},{},{},{},{},{}",
            self.parameter,
            self.value,
            self.seed,
            fmt_f64(self.rs_rel_error),
            fmt_f64(self.sigma_n_hat),
            fmt_f64(self.sigma_n_rel_error),
            self.detections,
            fmt_f64(self.hit_rate)
        );
        s
    }
}
