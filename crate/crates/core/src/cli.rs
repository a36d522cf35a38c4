//! `cpsd` subcommands.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand_distr::{Distribution, StandardNormal};

use crate::config::{Precision, ScenarioConfig};
use crate::pipeline::{
    certify, design, estimator_name, expected_rs, match_sources, relative_frobenius, run, RunError, RunOptions,
};
use crate::report::{
    write_marginal_csv, write_spectrum_csv, NoiseSummary, RunReport, SpectrumSummary, SpectrumVariant, SweepRow,
    Timings, SWEEP_HEADER,
};
use crate::scalar::Real;

pub const WORKERS_ENV: &str = "CPSD_WORKERS";

/// Band edges may sit this many bins from the configured ones for a hit.
pub const EDGE_TOLERANCE_BINS: f64 = 2.0;

#[derive(Debug, Parser)]
#[command(name = "cpsd", version, about = "Compressive angular/frequency power spectrum estimation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a scenario and estimate its 2D power spectrum.
    Run(RunArgs),
    /// Check the design (rulers, coverage, rank conditions) without simulating.
    Certify(CertifyArgs),
    /// Repeat a scenario over snapshot counts or coset sizes and seeds.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Scenario file.
    pub config: PathBuf,
    /// Overrides the scenario's master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the scenario's output directory.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Worker threads for correlation accumulation.
    #[arg(long, env = WORKERS_ENV)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct CertifyArgs {
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepParam {
    Snapshots,
    MT,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum, default_value = "snapshots")]
    pub param: SweepParam,
    /// Comma-separated values; may be empty.
    #[arg(long, default_value = "")]
    pub values: String,
    /// Seeds per value, counting up from the master seed.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
}

fn load(common: &Common) -> Result<ScenarioConfig, RunError> {
    let mut cfg = ScenarioConfig::load(&common.config)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(d) = &common.output_dir {
        cfg.output_dir = d.clone();
    }
    if let Some(w) = common.workers {
        if w == 0 {
            return Err(crate::config::ConfigError::Invalid {
                key: "workers",
                reason: "must be at least 1".into(),
            }
            .into());
        }
        cfg.workers = Some(w);
    }
    Ok(cfg)
}

fn workers(cfg: &ScenarioConfig) -> usize {
    cfg.workers
        .or_else(|| std::thread::available_parallelism().ok().map(|n| n.get()))
        .unwrap_or(1)
}

pub fn execute(cli: Cli) -> Result<(), RunError> {
    match cli.command {
        Command::Run(a) => {
            let cfg = load(&a.common)?;
            let report = match cfg.precision {
                Precision::F64 => run_scenario::<f64>(&cfg, &a.common.config)?,
                Precision::F32 => run_scenario::<f32>(&cfg, &a.common.config)?,
            };
            print_run_summary(&report);
            Ok(())
        }
        Command::Certify(a) => {
            let cfg = load(&a.common)?;
            let rep = certify(&cfg)?;
            let json = serde_json::to_string_pretty(&rep).expect("design report serializes");
            fs::create_dir_all(&cfg.output_dir)?;
            fs::write(cfg.output_dir.join("certificate.json"), format!("{json}\n"))?;
            for g in &rep.gates {
                println!("{:<28} {:<9} {:<5} {}", g.name, format!("{:?}", g.level).to_lowercase(), if g.passed { "ok" } else { "FAIL" }, g.detail);
            }
            println!(
                "theorem1 {} (run {:?})",
                if rep.theorem1.passed { "pass" } else { "fail" },
                rep.theorem1.witness
            );
            if let Some(t2) = &rep.theorem2 {
                println!("theorem2 {} ({:?})", if t2.passed { "pass" } else { "fail" }, t2.witness);
            }
            Ok(())
        }
        Command::Sweep(a) => {
            let cfg = load(&a.common)?;
            let values = parse_values(&a.values)?;
            let rows = match cfg.precision {
                Precision::F64 => run_sweep::<f64>(&cfg, a.param, &values, a.seeds)?,
                Precision::F32 => run_sweep::<f32>(&cfg, a.param, &values, a.seeds)?,
            };
            fs::create_dir_all(&cfg.output_dir)?;
            let path = cfg.output_dir.join("sweep.csv");
            let mut text = format!("{SWEEP_HEADER}\n");
            for r in &rows {
                text.push_str(&r.to_csv());
                text.push('\n');
            }
            fs::write(&path, text)?;
            println!("{} rows -> {}", rows.len(), path.display());
            Ok(())
        }
    }
}

fn parse_values(s: &str) -> Result<Vec<usize>, RunError> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse().map_err(|_| {
                RunError::Config(crate::config::ConfigError::Invalid {
                    key: "values",
                    reason: format!("{t:?} is not a count"),
                })
            })
        })
        .collect()
}

/// Files written by a run, removed again if a later step fails.
struct Outputs {
    created: Vec<PathBuf>,
    keep: bool,
}

impl Outputs {
    fn add(&mut self, p: &Path) -> PathBuf {
        self.created.push(p.to_path_buf());
        p.to_path_buf()
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if !self.keep {
            for p in &self.created {
                let _ = fs::remove_file(p);
            }
        }
    }
}

pub fn run_scenario<T: Real>(cfg: &ScenarioConfig, config_path: &Path) -> Result<RunReport, RunError>
where
    StandardNormal: Distribution<T>,
{
    let t0 = Instant::now();
    let d = design::<T>(cfg)?;
    let design_s = t0.elapsed().as_secs_f64();
    let sources = cfg.source_specs();
    let workers = workers(cfg);

    let dir = &cfg.output_dir;
    fs::create_dir_all(dir)?;
    let mut outputs = Outputs {
        created: Vec::new(),
        keep: false,
    };
    let dump_path = dir.join("snapshots.bin");
    let mut opts = RunOptions::from_config(cfg, workers);
    if cfg.dump != crate::config::DumpKind::None {
        outputs.add(&dump_path);
        opts.dump = Some((cfg.dump, &dump_path));
    }
    let out = run(&d, &sources, cfg.noise_variance, &opts)?;

    let tw = Instant::now();
    let write = |path: PathBuf, f: &dyn Fn(&mut BufWriter<File>) -> std::io::Result<()>| -> std::io::Result<()> {
        let mut w = BufWriter::new(File::create(&path)?);
        f(&mut w)?;
        w.flush()
    };
    let plot = outputs.add(&dir.join("spectrum_plot.csv"));
    write(plot, &|w| write_spectrum_csv(&out.spectrum, SpectrumVariant::Plot, w))?;
    let raw = outputs.add(&dir.join("spectrum_raw.csv"));
    write(raw, &|w| write_spectrum_csv(&out.spectrum, SpectrumVariant::Raw, w))?;
    let marg = outputs.add(&dir.join("angular_marginal.csv"));
    write(marg, &|w| write_marginal_csv(&out.spectrum, w))?;
    let write_s = tw.elapsed().as_secs_f64();

    let report_path = outputs.add(&dir.join("report.json"));
    let mut names: Vec<String> = outputs
        .created
        .iter()
        .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .collect();
    names.sort();
    let report = RunReport {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_path: config_path.display().to_string(),
        config: cfg.clone(),
        seed: cfg.seed,
        workers,
        design: d.report.clone(),
        noise: NoiseSummary {
            mode: format!("{:?}", cfg.noise_mode).to_lowercase(),
            estimator: estimator_name(out.solution.estimator).to_string(),
            sigma_n_hat: out.solution.sigma_n_hat.to_f64_lossy(),
            sigma_n_configured: cfg.noise_variance,
        },
        lag_residuals: out.lag_residuals,
        angular_residuals: out.angular_residuals,
        spectrum: SpectrumSummary {
            angles: out.spectrum.angles.len(),
            bins: out.spectrum.freqs.len(),
            bin_width: out.spectrum.bin_width(),
        },
        detections: out.detections.clone(),
        source_matches: match_sources(
            &out.detections,
            &sources,
            &d.grid,
            out.spectrum.bin_width(),
            EDGE_TOLERANCE_BINS,
        ),
        timings: Timings {
            design_s,
            stages: out.times.clone(),
            write_s,
        },
        outputs: names,
    };
    let json = serde_json::to_string_pretty(&report).map_err(|e| RunError::Numerical(e.to_string()))?;
    fs::write(&report_path, format!("{json}\n"))?;
    outputs.keep = true;
    Ok(report)
}

fn print_run_summary(r: &RunReport) {
    println!(
        "sigma_n^2 estimate {} ({}), {} detections",
        r.noise.sigma_n_hat,
        r.noise.estimator,
        r.detections.len()
    );
    for d in &r.detections {
        let bands: Vec<String> = d
            .bands
            .iter()
            .map(|(lo, hi)| format!("[{:.4}pi, {:.4}pi]", lo / std::f64::consts::PI, hi / std::f64::consts::PI))
            .collect();
        let split = d.split_with.map(|s| format!(" (split with {s})")).unwrap_or_default();
        println!("  {:>8.3} deg  q={}{}  power {:.4}  {}", d.angle_deg, d.grid_index, split, d.power, bands.join(" "));
    }
    println!("outputs in {}", r.config.output_dir.display());
}

pub fn run_sweep<T: Real>(cfg: &ScenarioConfig, param: SweepParam, values: &[usize], seeds: u64) -> Result<Vec<SweepRow>, RunError>
where
    StandardNormal: Distribution<T>,
{
    let sources = cfg.source_specs();
    let workers = workers(cfg);
    let mut rows = Vec::new();
    for &v in values {
        let mut c = cfg.clone();
        let name = match param {
            SweepParam::Snapshots => {
                c.snapshots = v;
                "snapshots"
            }
            SweepParam::MT => {
                c.coset.m_t = v;
                "m_t"
            }
        };
        c.check()?;
        let d = design::<T>(&c)?;
        let truth = expected_rs(&design::<f64>(&c)?, &sources, c.noise_variance)?;
        for s in 0..seeds {
            let mut opts = RunOptions::from_config(&c, workers);
            opts.seed = c.seed + s;
            let out = run(&d, &sources, c.noise_variance, &opts)?;
            let sigma = out.solution.sigma_n_hat.to_f64_lossy();
            let hits = match_sources(&out.detections, &sources, &d.grid, out.spectrum.bin_width(), EDGE_TOLERANCE_BINS)
                .iter()
                .filter(|m| m.detection.is_some())
                .count();
            rows.push(SweepRow {
                parameter: name,
                value: v,
                seed: opts.seed,
                rs_rel_error: relative_frobenius(&out.solution.rs, &truth),
                sigma_n_hat: sigma,
                sigma_n_rel_error: if c.noise_variance > 0.0 {
                    (sigma - c.noise_variance).abs() / c.noise_variance
                } else {
                    sigma.abs()
                },
                detections: out.detections.len(),
                hit_rate: if sources.is_empty() {
                    1.0
                } else {
                    hits as f64 / sources.len() as f64
                },
            });
        }
    }
    Ok(rows)
}
