//! Scenario files. TOML with top-level run settings and `[geometry]`,
//! `[coset]`, `[grid]` and `[[sources]]` sections; see the README for the
//! full grammar.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{spacing_from_f64, Rational};
use crate::simulate::SourceSpec;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid value for {key}: {reason}")]
    Invalid { key: &'static str, reason: String },
}

fn invalid(key: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseModeKey {
    Known,
    #[default]
    Estimate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DumpKind {
    #[default]
    None,
    /// `M_s x M_t` blocks as they enter the estimator.
    Compressed,
    /// `N_s x N_t` Nyquist-rate blocks.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SpacingKey {
    Number(f64),
    Text(String),
}

impl SpacingKey {
    pub fn to_rational(&self) -> Result<Rational, ConfigError> {
        match self {
            SpacingKey::Number(d) => spacing_from_f64(*d).ok_or_else(|| invalid("geometry.spacing", d.to_string())),
            SpacingKey::Text(s) => s
                .trim()
                .parse::<Rational>()
                .map_err(|e| invalid("geometry.spacing", format!("{s:?}: {e}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MarkSource {
    Explicit(Vec<usize>),
    Nested { nested: [usize; 2] },
    Coprime { coprime: [usize; 2] },
    /// `"sparse-ruler"`: minimal ruler of length `N_s - 1`.
    Keyword(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySection {
    pub antennas: usize,
    pub spacing: SpacingKey,
    pub marks: MarkSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CosetSection {
    pub n_t: usize,
    pub m_t: usize,
    #[serde(default)]
    pub seed: u64,
    /// Sparse ruler of length `N_t - 1`; solved when absent.
    #[serde(default)]
    pub ruler: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum GridMode {
    #[default]
    InverseSin,
    Explicit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(default)]
    pub mode: GridMode,
    #[serde(default)]
    pub q: Option<usize>,
    #[serde(default)]
    pub angles_deg: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSection {
    pub doa_deg: f64,
    /// Band edges in units of pi rad/sample.
    pub band: [f64; 2],
    pub variance: f64,
}

fn default_threshold() -> f64 {
    0.25
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub seed: u64,
    pub snapshots: usize,
    pub noise_variance: f64,
    #[serde(default)]
    pub noise_mode: NoiseModeKey,
    #[serde(default)]
    pub precision: Precision,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default = "default_threshold")]
    pub peak_threshold: f64,
    #[serde(default)]
    pub symmetrize: bool,
    #[serde(default)]
    pub dump: DumpKind,
    pub geometry: GeometrySection,
    pub coset: CosetSection,
    pub grid: GridSection,
    #[serde(default)]
    pub sources: Vec<SourceSection>,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = toml::from_str(text)?;
        cfg.check()?;
        Ok(cfg)
    }

    /// Reads `path`; a relative `output_dir` stays relative to the caller's
    /// working directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    /// Field-local checks; cross-field design gates live in the pipeline.
    pub fn check(&self) -> Result<(), ConfigError> {
        if self.snapshots == 0 {
            return Err(invalid("snapshots", "must be at least 1"));
        }
        if !(self.noise_variance >= 0.0 && self.noise_variance.is_finite()) {
            return Err(invalid("noise_variance", "must be finite and nonnegative"));
        }
        if !(self.peak_threshold > 0.0 && self.peak_threshold <= 1.0) {
            return Err(invalid("peak_threshold", "must lie in (0, 1]"));
        }
        if self.workers == Some(0) {
            return Err(invalid("workers", "must be at least 1"));
        }
        if self.geometry.antennas == 0 {
            return Err(invalid("geometry.antennas", "must be at least 1"));
        }
        self.geometry.spacing.to_rational()?;
        if let MarkSource::Keyword(k) = &self.geometry.marks {
            if k != "sparse-ruler" {
                return Err(invalid("geometry.marks", format!("unknown generator {k:?}")));
            }
        }
        if self.coset.n_t == 0 {
            return Err(invalid("coset.n_t", "must be at least 1"));
        }
        if self.coset.m_t == 0 || self.coset.m_t > self.coset.n_t {
            return Err(invalid("coset.m_t", "must satisfy 1 <= m_t <= n_t"));
        }
        match self.grid.mode {
            GridMode::InverseSin => {
                if self.grid.q.unwrap_or(0) == 0 {
                    return Err(invalid("grid.q", "inverse-sin grid needs q >= 1"));
                }
                if self.grid.angles_deg.is_some() {
                    return Err(invalid("grid.angles_deg", "only allowed with mode = \"explicit\""));
                }
            }
            GridMode::Explicit => {
                let angles = self
                    .grid
                    .angles_deg
                    .as_ref()
                    .ok_or_else(|| invalid("grid.angles_deg", "explicit grid needs angles_deg"))?;
                if let Some(q) = self.grid.q {
                    if q != angles.len() {
                        return Err(invalid("grid.q", "disagrees with the number of explicit angles"));
                    }
                }
            }
        }
        for s in &self.sources {
            if !(s.doa_deg > -90.0 && s.doa_deg <= 90.0) {
                return Err(invalid("sources.doa_deg", format!("{} outside (-90, 90]", s.doa_deg)));
            }
            if !(s.variance >= 0.0 && s.variance.is_finite()) {
                return Err(invalid("sources.variance", "must be finite and nonnegative"));
            }
            if !(s.band[0] >= -1.0 && s.band[1] <= 1.0 && s.band[0] < s.band[1]) {
                return Err(invalid("sources.band", format!("{:?} must satisfy -1 <= lo < hi <= 1", s.band)));
            }
        }
        Ok(())
    }

    pub fn source_specs(&self) -> Vec<SourceSpec> {
        self.sources
            .iter()
            .map(|s| SourceSpec {
                doa: s.doa_deg.to_radians(),
                band: (s.band[0] * PI, s.band[1] * PI),
                input_variance: s.variance,
            })
            .collect()
    }
}
