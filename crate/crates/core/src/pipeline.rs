//! Design, simulation and estimation wired together for one scenario.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::time::Instant;

use num_complex::Complex;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, DumpKind, GridMode, MarkSource, NoiseModeKey, ScenarioConfig};
use crate::estimate::{
    build_rct, find_peaks, recover_angular, recover_lags, residual_summary, spectrum, AngularSolution,
    CorrelationAccumulator, Detection, EstimateError, NoiseEstimator, NoiseMode, PairCorrelations, Rct, SpectrumMatrix,
};
use crate::geometry::{
    check_theorem1, check_theorem2, difference_set, generate_coprime, generate_nested, solve_sparse_ruler,
    GeometryError, RankCertificate, RulerSolution,
};
use crate::linalg::CMatrix;
use crate::model::{inverse_sin_grid, manifold_and_kr, rank_report, AngularGrid, ArrayGeometry, ManifoldMatrices, RankReport};
use crate::oracle::{exact_correlations, true_source_autocorr};
use crate::scalar::Real;
use crate::simulate::{
    build_coset_pattern, design_bandpass, rng_stream, spatial_compress_block, temporal_compress_block, CosetPattern,
    SimError, SnapshotDumpWriter, SnapshotGenerator, SourceSpec, Stream,
};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("design gate {name} failed: {detail}")]
    Gate { name: String, detail: String },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Gate { .. } => 3,
            RunError::Numerical(_) => 4,
            RunError::Io(_) => 1,
        }
    }
}

fn config_error(key: &'static str, reason: impl ToString) -> RunError {
    RunError::Config(ConfigError::Invalid {
        key,
        reason: reason.to_string(),
    })
}

impl From<SimError> for RunError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Io(io) => RunError::Io(io),
            SimError::Dump(msg) => RunError::Numerical(msg),
            other => config_error("sources", other),
        }
    }
}

impl From<EstimateError> for RunError {
    fn from(e: EstimateError) -> Self {
        match e {
            EstimateError::RctRankDeficient { .. } => RunError::Gate {
                name: "rct-column-coverage".into(),
                detail: e.to_string(),
            },
            EstimateError::KrRankDeficient(_) => RunError::Gate {
                name: "kr-rank".into(),
                detail: e.to_string(),
            },
            other => RunError::Numerical(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GateLevel {
    /// Failure stops the run.
    Gate,
    Warning,
    Advisory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateOutcome {
    pub name: String,
    pub level: GateLevel,
    pub passed: bool,
    pub detail: String,
}

/// Everything known about a design before any data is generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignReport {
    pub antennas: usize,
    pub spacing: String,
    pub active_marks: Vec<usize>,
    pub spatial_compression_rate: f64,
    pub n_t: usize,
    pub m_t: usize,
    pub temporal_compression_rate: f64,
    pub ruler: Option<RulerSolution>,
    pub coset_rows: Option<Vec<usize>>,
    pub rct_missing_lags: Option<Vec<isize>>,
    pub q: usize,
    pub grid_degrees: Vec<f64>,
    pub theorem1: RankCertificate,
    pub theorem2: Option<RankCertificate>,
    pub kr_rank: RankReport,
    pub augmented_rank: RankReport,
    pub gates: Vec<GateOutcome>,
}

impl DesignReport {
    pub fn failed_gate(&self) -> Option<&GateOutcome> {
        self.gates.iter().find(|g| g.level == GateLevel::Gate && !g.passed)
    }
}

pub struct Design<T> {
    pub geometry: ArrayGeometry,
    pub pattern: CosetPattern,
    pub rct: Rct,
    pub grid: AngularGrid<T>,
    pub manifold: ManifoldMatrices<T>,
    pub report: DesignReport,
}

struct Parts<T> {
    geometry: ArrayGeometry,
    pattern: Option<CosetPattern>,
    rct: Option<Rct>,
    grid: AngularGrid<T>,
    manifold: ManifoldMatrices<T>,
    report: DesignReport,
}

fn resolve_marks(cfg: &ScenarioConfig) -> Result<Vec<usize>, RunError> {
    let n_s = cfg.geometry.antennas;
    let marks = match &cfg.geometry.marks {
        MarkSource::Explicit(m) => m.clone(),
        MarkSource::Nested { nested: [a, b] } => generate_nested(*a, *b).map_err(|e| config_error("geometry.marks", e))?,
        MarkSource::Coprime { coprime: [a, b] } => generate_coprime(*a, *b).map_err(|e| config_error("geometry.marks", e))?,
        MarkSource::Keyword(_) if n_s == 1 => vec![0],
        MarkSource::Keyword(_) => solve_sparse_ruler(n_s - 1).map_err(|e| config_error("geometry.marks", e))?.marks,
    };
    Ok(marks)
}

fn resolve_ruler(cfg: &ScenarioConfig) -> Result<Option<RulerSolution>, RunError> {
    let n_t = cfg.coset.n_t;
    match &cfg.coset.ruler {
        Some(marks) => {
            if n_t == 1 {
                return Err(config_error("coset.ruler", "N_t = 1 needs no ruler"));
            }
            RulerSolution::supplied(marks, n_t - 1)
                .map(Some)
                .map_err(|e| config_error("coset.ruler", e))
        }
        None if n_t == 1 => Ok(None),
        None => solve_sparse_ruler(n_t - 1)
            .map(Some)
            .map_err(|e: GeometryError| config_error("coset.ruler", e)),
    }
}

fn build_parts<T: Real>(cfg: &ScenarioConfig) -> Result<Parts<T>, RunError> {
    let spacing = cfg.geometry.spacing.to_rational()?;
    let n_s = cfg.geometry.antennas;
    let geometry =
        ArrayGeometry::new(n_s, spacing, resolve_marks(cfg)?).map_err(|e| config_error("geometry", e))?;
    let grid: AngularGrid<T> = match cfg.grid.mode {
        GridMode::InverseSin => inverse_sin_grid(cfg.grid.q.unwrap_or(0)),
        GridMode::Explicit => AngularGrid::from_degrees(cfg.grid.angles_deg.as_deref().unwrap_or(&[])),
    }
    .map_err(|e| config_error("grid", e))?;
    let q = grid.len();
    let (n_t, m_t) = (cfg.coset.n_t, cfg.coset.m_t);
    let m_s = geometry.m_active();
    let mut gates = Vec::new();

    let lag_count = 2 * n_t - 1;
    gates.push(GateOutcome {
        name: "coset-lag-count".into(),
        level: GateLevel::Gate,
        passed: m_t * m_t >= lag_count,
        detail: format!("M_t^2 = {} against 2N_t - 1 = {lag_count}", m_t * m_t),
    });

    let ruler = resolve_ruler(cfg)?;
    let mut rng = rng_stream(cfg.coset.seed, Stream::CosetExtras);
    let pattern = match build_coset_pattern(n_t, m_t, ruler.as_ref(), &mut rng) {
        Ok(p) => {
            gates.push(GateOutcome {
                name: "coset-ruler-cardinality".into(),
                level: GateLevel::Gate,
                passed: true,
                detail: format!("{} ruler rows within M_t = {m_t}", ruler.as_ref().map_or(1, |r| r.cardinality)),
            });
            Some(p)
        }
        Err(SimError::CosetTooSmall { needed, m_t }) => {
            gates.push(GateOutcome {
                name: "coset-ruler-cardinality".into(),
                level: GateLevel::Gate,
                passed: false,
                detail: format!("ruler needs {needed} rows but M_t = {m_t}"),
            });
            None
        }
        Err(e) => return Err(e.into()),
    };
    let rct = pattern.as_ref().map(build_rct);
    if let Some(r) = &rct {
        gates.push(GateOutcome {
            name: "rct-column-coverage".into(),
            level: GateLevel::Gate,
            passed: r.full_column_rank,
            detail: if r.full_column_rank {
                format!("all {lag_count} lag columns covered")
            } else {
                format!("uncovered lags {:?}", r.missing_lags())
            },
        });
    }

    let manifold = manifold_and_kr(&geometry, &grid);
    let kr_rank = rank_report(&manifold.kr, None);
    let augmented_rank = rank_report(&manifold.kr, Some(&manifold.noise_column));
    gates.push(GateOutcome {
        name: "kr-rank".into(),
        level: GateLevel::Gate,
        passed: kr_rank.full_column_rank,
        detail: format!(
            "rank {} of {}, condition number {:e}",
            kr_rank.rank, kr_rank.cols, kr_rank.condition_number
        ),
    });
    gates.push(GateOutcome {
        name: "spatial-unknowns".into(),
        level: GateLevel::Warning,
        passed: m_s * m_s >= q,
        detail: format!("M_s^2 = {} against Q = {q}", m_s * m_s),
    });
    gates.push(GateOutcome {
        name: "detectable-sources".into(),
        level: GateLevel::Advisory,
        passed: q < 2 * n_s,
        detail: format!("Q = {q} against 2N_s - 1 = {}", 2 * n_s - 1),
    });
    if cfg.noise_mode == NoiseModeKey::Estimate {
        gates.push(GateOutcome {
            name: "noise-column-identifiable".into(),
            level: GateLevel::Advisory,
            passed: augmented_rank.full_column_rank,
            detail: if augmented_rank.full_column_rank {
                "joint least squares".into()
            } else {
                "vec(I) lies in the span of B* ⊙ B; spectral-floor estimate used".into()
            },
        });
    }

    let diffs = difference_set(&geometry.active_marks, spacing);
    let theorem1 = check_theorem1(&diffs, q, spacing).with_condition_number(kr_rank.condition_number);
    let theorem2 = (cfg.grid.mode == GridMode::InverseSin)
        .then(|| check_theorem2(&diffs, q).with_condition_number(kr_rank.condition_number));

    let report = DesignReport {
        antennas: n_s,
        spacing: spacing.to_string(),
        active_marks: geometry.active_marks.clone(),
        spatial_compression_rate: geometry.spatial_compression_rate(),
        n_t,
        m_t,
        temporal_compression_rate: m_t as f64 / n_t as f64,
        ruler,
        coset_rows: pattern.as_ref().map(|p| p.rows.clone()),
        rct_missing_lags: rct.as_ref().map(|r| r.missing_lags()),
        q,
        grid_degrees: grid.degrees(),
        theorem1,
        theorem2,
        kr_rank,
        augmented_rank,
        gates,
    };
    Ok(Parts {
        geometry,
        pattern,
        rct,
        grid,
        manifold,
        report,
    })
}

/// Design checks only; gate failures are recorded, not raised.
pub fn certify(cfg: &ScenarioConfig) -> Result<DesignReport, RunError> {
    Ok(build_parts::<f64>(cfg)?.report)
}

pub fn design<T: Real>(cfg: &ScenarioConfig) -> Result<Design<T>, RunError> {
    let parts = build_parts::<T>(cfg)?;
    if let Some(g) = parts.report.failed_gate() {
        return Err(RunError::Gate {
            name: g.name.clone(),
            detail: g.detail.clone(),
        });
    }
    let (Some(pattern), Some(rct)) = (parts.pattern, parts.rct) else {
        unreachable!("gates passed without a coset pattern");
    };
    Ok(Design {
        geometry: parts.geometry,
        pattern,
        rct,
        grid: parts.grid,
        manifold: parts.manifold,
        report: parts.report,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualStats {
    pub max: f64,
    pub rms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTimes {
    pub simulate_and_correlate_s: f64,
    pub lag_recovery_s: f64,
    pub angular_recovery_s: f64,
    pub spectrum_and_peaks_s: f64,
}

pub struct RunOutput<T> {
    pub spectrum: SpectrumMatrix<T>,
    pub solution: AngularSolution<T>,
    pub detections: Vec<Detection>,
    pub lag_residuals: ResidualStats,
    pub angular_residuals: ResidualStats,
    pub times: StageTimes,
}

pub struct RunOptions<'a> {
    pub seed: u64,
    pub snapshots: usize,
    pub workers: usize,
    pub noise_mode: NoiseMode,
    pub symmetrize: bool,
    pub peak_threshold: f64,
    pub dump: Option<(DumpKind, &'a Path)>,
}

impl<'a> RunOptions<'a> {
    pub fn from_config(cfg: &ScenarioConfig, workers: usize) -> Self {
        Self {
            seed: cfg.seed,
            snapshots: cfg.snapshots,
            workers,
            noise_mode: noise_mode(cfg),
            symmetrize: cfg.symmetrize,
            peak_threshold: cfg.peak_threshold,
            dump: None,
        }
    }
}

pub fn noise_mode(cfg: &ScenarioConfig) -> NoiseMode {
    match cfg.noise_mode {
        NoiseModeKey::Known => NoiseMode::Known(cfg.noise_variance),
        NoiseModeKey::Estimate => NoiseMode::Estimate,
    }
}

/// Streams `snapshots` blocks through compression into the pair
/// correlations, without holding the blocks in memory.
pub fn correlate<T: Real>(
    design: &Design<T>,
    sources: &[SourceSpec],
    noise_variance: f64,
    opts: &RunOptions,
) -> Result<PairCorrelations<T>, RunError>
where
    StandardNormal: Distribution<T>,
{
    let n_t = design.pattern.n_t;
    let mut gen = SnapshotGenerator::<T>::new(sources, &design.geometry, noise_variance, n_t, opts.seed)?;
    let mut acc = CorrelationAccumulator::new(design.geometry.m_active(), design.pattern.m_t, opts.workers);
    let mut dump = match opts.dump {
        Some((DumpKind::None, _)) | None => None,
        Some((kind, path)) => {
            let (rows, cols) = match kind {
                DumpKind::Full => (design.geometry.n_underlying, n_t),
                _ => (design.geometry.m_active(), design.pattern.m_t),
            };
            let file = BufWriter::new(File::create(path)?);
            Some((kind, SnapshotDumpWriter::new(file, rows, cols, opts.snapshots)?))
        }
    };
    for _ in 0..opts.snapshots {
        let x = gen.next_block();
        if let Some((DumpKind::Full, w)) = dump.as_mut() {
            w.write_block(&x)?;
        }
        let z = temporal_compress_block(&spatial_compress_block(&x, &design.geometry), &design.pattern);
        if let Some((DumpKind::Compressed, w)) = dump.as_mut() {
            w.write_block(&z)?;
        }
        acc.add_block(z)?;
    }
    if let Some((_, w)) = dump {
        w.finish()?;
    }
    Ok(acc.finish()?)
}

pub fn run<T: Real>(
    design: &Design<T>,
    sources: &[SourceSpec],
    noise_variance: f64,
    opts: &RunOptions,
) -> Result<RunOutput<T>, RunError>
where
    StandardNormal: Distribution<T>,
{
    let t0 = Instant::now();
    let pc = correlate(design, sources, noise_variance, opts)?;
    let sim_s = t0.elapsed().as_secs_f64();

    let mut corr = recover_lags(&design.rct, &pc)?;
    if opts.symmetrize {
        corr.symmetrize();
    }
    let t1 = Instant::now();
    let solution = recover_angular(&design.manifold, &corr, opts.noise_mode)?;
    let t2 = Instant::now();
    let spec = spectrum(&solution.rs, &design.grid, solution.sigma_n_hat);
    let detections = find_peaks(&spec, opts.peak_threshold);
    let t3 = Instant::now();

    let (lmax, lrms) = residual_summary(&corr.residual_norms);
    let (amax, arms) = residual_summary(&solution.residual_norms);
    Ok(RunOutput {
        spectrum: spec,
        solution,
        detections,
        lag_residuals: ResidualStats { max: lmax, rms: lrms },
        angular_residuals: ResidualStats { max: amax, rms: arms },
        times: StageTimes {
            simulate_and_correlate_s: sim_s,
            lag_recovery_s: (t1 - t0).as_secs_f64() - sim_s,
            angular_recovery_s: (t2 - t1).as_secs_f64(),
            spectrum_and_peaks_s: (t3 - t2).as_secs_f64(),
        },
    })
}

/// `R̄_s` the estimator converges to: oracle correlations of the same
/// sources pushed through the same solves with the noise variance known.
pub fn expected_rs(design: &Design<f64>, sources: &[SourceSpec], noise_variance: f64) -> Result<CMatrix<f64>, RunError> {
    let n_t = design.pattern.n_t;
    let mut autocorrs = Vec::with_capacity(sources.len());
    for s in sources {
        let taps = design_bandpass::<f64>(s.band, n_t)?;
        autocorrs.push(true_source_autocorr(&taps, s.input_variance));
    }
    let doas: Vec<f64> = sources.iter().map(|s| s.doa).collect();
    let ex = exact_correlations(&design.geometry, &design.pattern, &doas, autocorrs, noise_variance);
    let pc = PairCorrelations {
        m_s: ex.m_s,
        m_t: design.pattern.m_t,
        n_blocks: 1,
        vec_rz: ex.vec_rz,
    };
    let corr = recover_lags(&design.rct, &pc)?;
    Ok(recover_angular(&design.manifold, &corr, NoiseMode::Known(noise_variance))?.rs)
}

pub fn relative_frobenius<T: Real>(est: &CMatrix<T>, truth: &CMatrix<f64>) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (a, b) in est.as_slice().iter().zip(truth.as_slice()) {
        let a = Complex::new(a.re.to_f64_lossy(), a.im.to_f64_lossy());
        num += (a - b).norm_sqr();
        den += b.norm_sqr();
    }
    (num / den).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceMatch {
    pub source: usize,
    pub doa_deg: f64,
    pub grid_position: f64,
    pub detection: Option<usize>,
}

/// A source is hit when a detection (or its split partner) sits within one
/// grid cell of it and one detected band has both edges within
/// `edge_bins` bins of the true band.
pub fn match_sources<T: Real>(
    detections: &[Detection],
    sources: &[SourceSpec],
    grid: &AngularGrid<T>,
    bin_width: f64,
    edge_bins: f64,
) -> Vec<SourceMatch> {
    sources
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let pos = grid.fractional_index(s.doa);
            let detection = detections.iter().position(|d| {
                let near = |q: usize| (q as f64 - pos).abs() <= 1.0;
                let angle_ok = near(d.grid_index) || d.split_with.is_some_and(near);
                let band_ok = d.bands.iter().any(|&(lo, hi)| {
                    (lo - s.band.0).abs() <= edge_bins * bin_width && (hi - s.band.1).abs() <= edge_bins * bin_width
                });
                angle_ok && band_ok
            });
            SourceMatch {
                source: k,
                doa_deg: s.doa.to_degrees(),
                grid_position: pos,
                detection,
            }
        })
        .collect()
}

pub fn estimator_name(e: NoiseEstimator) -> &'static str {
    match e {
        NoiseEstimator::Known => "known",
        NoiseEstimator::JointLs => "joint-ls",
        NoiseEstimator::SpectralFloor => "spectral-floor",
    }
}
