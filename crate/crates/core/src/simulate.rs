//! Scenario synthesis: bandpass-filtered Gaussian sources impinging on a ULA,
//! then antenna selection and multi-coset time selection.

use std::io::{self, Read, Write};

use num_complex::Complex;
use num_traits::Zero;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{solve_sparse_ruler, GeometryError, RulerSolution};
use crate::linalg::CMatrix;
use crate::model::{steering_vector, ArrayGeometry};
use crate::scalar::{cis, Real};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("band [{lo}, {hi}] must satisfy -pi <= lo < hi <= pi")]
    BadBand { lo: f64, hi: f64 },
    #[error("band width {width} is narrower than 2*pi/{n_taps}, unresolvable with {n_taps} taps")]
    BandTooNarrow { width: f64, n_taps: usize },
    #[error("filter needs at least one tap")]
    NoTaps,
    #[error("input variance must be nonnegative and finite")]
    BadVariance,
    #[error("direction of arrival {0} rad outside (-pi/2, pi/2]")]
    DoaOutOfRange(f64),
    #[error("coset pattern needs {needed} rows for its ruler but M_t = {m_t}")]
    CosetTooSmall { needed: usize, m_t: usize },
    #[error("coset pattern must satisfy 1 <= M_t <= N_t (got M_t = {m_t}, N_t = {n_t})")]
    CosetShape { m_t: usize, n_t: usize },
    #[error("ruler length {got} does not match N_t - 1 = {expected}")]
    RulerLength { got: usize, expected: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("snapshot dump: {0}")]
    Dump(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One wide-sense stationary source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    /// Direction of arrival, radians.
    pub doa: f64,
    /// Occupied band `(lo, hi)` in rad/sample.
    pub band: (f64, f64),
    /// Variance of the white input driving the filter.
    pub input_variance: f64,
}

/// Hamming-windowed, frequency-shifted sinc with unit gain at band center.
pub fn design_bandpass<T: Real>(band: (f64, f64), n_taps: usize) -> Result<Vec<Complex<T>>, SimError> {
    use std::f64::consts::PI;
    let (lo, hi) = band;
    if n_taps == 0 {
        return Err(SimError::NoTaps);
    }
    if !(lo.is_finite() && hi.is_finite()) || lo < -PI || hi > PI || lo >= hi {
        return Err(SimError::BadBand { lo, hi });
    }
    let width = hi - lo;
    if width < 2.0 * PI / n_taps as f64 {
        return Err(SimError::BandTooNarrow { width, n_taps });
    }
    let half_width = width / 2.0;
    let center = (lo + hi) / 2.0;
    let mid = (n_taps as f64 - 1.0) / 2.0;
    let taps: Vec<Complex<f64>> = (0..n_taps)
        .map(|n| {
            let t = n as f64 - mid;
            let lowpass = if t == 0.0 {
                half_width / PI
            } else {
                (half_width * t).sin() / (PI * t)
            };
            let window = if n_taps == 1 {
                1.0
            } else {
                0.54 - 0.46 * (2.0 * PI * n as f64 / (n_taps as f64 - 1.0)).cos()
            };
            cis(center * t) * (lowpass * window)
        })
        .collect();
    let gain = dtft(&taps, center).norm();
    Ok(taps.iter().map(|z| Complex::new(T::of(z.re / gain), T::of(z.im / gain))).collect())
}

/// `H(omega) = sum_n h[n] exp(-j omega n)`.
pub fn dtft<T: Real>(taps: &[Complex<T>], omega: T) -> Complex<T> {
    taps.iter()
        .enumerate()
        .fold(Complex::zero(), |acc, (n, &h)| acc + h * cis(-omega * T::of_usize(n)))
}

/// Named, independently seeded random streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Noise,
    CosetExtras,
    Source(usize),
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Noise => 1,
            Stream::CosetExtras => 2,
            Stream::Source(k) => 16 + k as u64,
        }
    }
}

/// ChaCha stream for `which`, derived from the master seed.
pub fn rng_stream(master_seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(which.id());
    rng
}

/// Circular complex Gaussian sample with the given variance.
#[inline]
pub fn complex_gaussian<T: Real, R: Rng + ?Sized>(rng: &mut R, variance: T) -> Complex<T>
where
    StandardNormal: Distribution<T>,
{
    let s = (variance / T::of(2.0)).sqrt();
    let re: T = rng.sample(StandardNormal);
    let im: T = rng.sample(StandardNormal);
    Complex::new(re * s, im * s)
}

/// Streaming FIR-filtered white Gaussian source. The first `n_taps - 1`
/// inputs only prime the filter, so every emitted sample is stationary.
pub struct SourceStream<T> {
    taps: Vec<Complex<T>>,
    /// Most recent input first.
    history: Vec<Complex<T>>,
    head: usize,
    variance: T,
    rng: ChaCha8Rng,
}

impl<T: Real> SourceStream<T>
where
    StandardNormal: Distribution<T>,
{
    pub fn new(taps: Vec<Complex<T>>, variance: T, mut rng: ChaCha8Rng) -> Self {
        let n = taps.len();
        let mut history = vec![Complex::zero(); n];
        // warm-up: fill all but one slot
        for k in 0..n.saturating_sub(1) {
            history[n - 1 - k] = complex_gaussian(&mut rng, variance);
        }
        Self {
            taps,
            history,
            head: 0,
            variance,
            rng,
        }
    }

    pub fn next_sample(&mut self) -> Complex<T> {
        let n = self.taps.len();
        // history is a ring buffer; slot `head` receives the newest input
        self.history[self.head] = complex_gaussian(&mut self.rng, self.variance);
        let mut acc = Complex::zero();
        for (k, &h) in self.taps.iter().enumerate() {
            acc += h * self.history[(self.head + n - k) % n];
        }
        self.head = (self.head + 1) % n;
        acc
    }
}

/// `total_samples` of the filtered source.
pub fn synth_source<T: Real>(taps: &[Complex<T>], variance: T, total_samples: usize, rng: ChaCha8Rng) -> Vec<Complex<T>>
where
    StandardNormal: Distribution<T>,
{
    let mut stream = SourceStream::new(taps.to_vec(), variance, rng);
    (0..total_samples).map(|_| stream.next_sample()).collect()
}

/// Consecutive `rows x N_t` (or compressed) snapshot matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotBlocks<T> {
    pub blocks: Vec<CMatrix<T>>,
}

impl<T: Real> SnapshotBlocks<T> {
    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn shape(&self) -> Option<(usize, usize)> {
        self.blocks.first().map(|b| (b.rows(), b.cols()))
    }
}

/// Block-by-block generator of `X[n] = A S[n] + N[n]` over the full ULA.
pub struct SnapshotGenerator<T> {
    sources: Vec<(Vec<Complex<T>>, SourceStream<T>)>,
    noise_variance: T,
    noise_rng: ChaCha8Rng,
    n_underlying: usize,
    n_t: usize,
}

impl<T: Real> SnapshotGenerator<T>
where
    StandardNormal: Distribution<T>,
{
    pub fn new(
        sources: &[SourceSpec],
        geometry: &ArrayGeometry,
        noise_variance: f64,
        n_t: usize,
        master_seed: u64,
    ) -> Result<Self, SimError> {
        let positions = geometry.ula_positions::<T>();
        let half_pi = std::f64::consts::FRAC_PI_2;
        let mut streams = Vec::with_capacity(sources.len());
        for (k, src) in sources.iter().enumerate() {
            if !(src.doa > -half_pi && src.doa <= half_pi) {
                return Err(SimError::DoaOutOfRange(src.doa));
            }
            if !(src.input_variance >= 0.0 && src.input_variance.is_finite()) {
                return Err(SimError::BadVariance);
            }
            let taps = design_bandpass::<T>(src.band, n_t)?;
            let steering = steering_vector(T::of(src.doa), &positions);
            let stream = SourceStream::new(taps, T::of(src.input_variance), rng_stream(master_seed, Stream::Source(k)));
            streams.push((steering, stream));
        }
        if !(noise_variance >= 0.0 && noise_variance.is_finite()) {
            return Err(SimError::BadVariance);
        }
        Ok(Self {
            sources: streams,
            noise_variance: T::of(noise_variance),
            noise_rng: rng_stream(master_seed, Stream::Noise),
            n_underlying: geometry.n_underlying,
            n_t,
        })
    }

    pub fn next_block(&mut self) -> CMatrix<T> {
        let mut x = CMatrix::zeros(self.n_underlying, self.n_t);
        for t in 0..self.n_t {
            let col = x.col_mut(t);
            for (steering, stream) in self.sources.iter_mut() {
                let s = stream.next_sample();
                for (xi, &a) in col.iter_mut().zip(steering.iter()) {
                    *xi += a * s;
                }
            }
            if !self.noise_variance.is_zero() {
                for xi in col.iter_mut() {
                    *xi += complex_gaussian(&mut self.noise_rng, self.noise_variance);
                }
            }
        }
        x
    }
}

/// `n_blocks` consecutive `N_s x N_t` snapshot matrices.
pub fn ula_snapshots<T: Real>(
    sources: &[SourceSpec],
    geometry: &ArrayGeometry,
    noise_variance: f64,
    n_blocks: usize,
    n_t: usize,
    master_seed: u64,
) -> Result<SnapshotBlocks<T>, SimError>
where
    StandardNormal: Distribution<T>,
{
    let mut gen = SnapshotGenerator::new(sources, geometry, noise_variance, n_t, master_seed)?;
    Ok(SnapshotBlocks {
        blocks: (0..n_blocks).map(|_| gen.next_block()).collect(),
    })
}

/// Keeps the rows of one block that belong to active antennas.
pub fn spatial_compress_block<T: Real>(block: &CMatrix<T>, geometry: &ArrayGeometry) -> CMatrix<T> {
    block.select_rows(&geometry.active_marks)
}

pub fn spatial_compress<T: Real>(blocks: &SnapshotBlocks<T>, geometry: &ArrayGeometry) -> SnapshotBlocks<T> {
    SnapshotBlocks {
        blocks: blocks.blocks.iter().map(|b| spatial_compress_block(b, geometry)).collect(),
    }
}

/// Multi-coset pattern: which of every `N_t` Nyquist samples are kept.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CosetPattern {
    pub n_t: usize,
    pub m_t: usize,
    /// Sorted selected rows of `I_{N_t}`.
    pub rows: Vec<usize>,
}

impl CosetPattern {
    pub fn new(n_t: usize, rows: Vec<usize>) -> Result<Self, SimError> {
        let ordered = rows.windows(2).all(|w| w[0] < w[1]);
        if rows.is_empty() || !ordered || rows.iter().any(|&r| r >= n_t) {
            return Err(SimError::CosetShape { m_t: rows.len(), n_t });
        }
        Ok(Self {
            n_t,
            m_t: rows.len(),
            rows,
        })
    }

    pub fn compression_rate(&self) -> f64 {
        self.m_t as f64 / self.n_t as f64
    }
}

/// Ruler rows plus `M_t - |ruler|` extra rows drawn without replacement from
/// the rest. Without a supplied ruler the length-`(N_t - 1)` one is solved.
pub fn build_coset_pattern(
    n_t: usize,
    m_t: usize,
    ruler: Option<&RulerSolution>,
    rng: &mut ChaCha8Rng,
) -> Result<CosetPattern, SimError> {
    if m_t == 0 || m_t > n_t {
        return Err(SimError::CosetShape { m_t, n_t });
    }
    let marks: Vec<usize> = match ruler {
        Some(r) if r.length + 1 != n_t => {
            return Err(SimError::RulerLength {
                got: r.length,
                expected: n_t - 1,
            })
        }
        Some(r) => r.marks.clone(),
        None if n_t == 1 => vec![0],
        None => solve_sparse_ruler(n_t - 1)?.marks,
    };
    if m_t < marks.len() {
        return Err(SimError::CosetTooSmall {
            needed: marks.len(),
            m_t,
        });
    }
    let complement: Vec<usize> = (0..n_t).filter(|r| !marks.contains(r)).collect();
    let extra = m_t - marks.len();
    let mut rows = marks;
    rows.extend(index::sample(rng, complement.len(), extra).into_iter().map(|i| complement[i]));
    rows.sort_unstable();
    CosetPattern::new(n_t, rows)
}

/// Keeps the columns of one block listed in the pattern.
pub fn temporal_compress_block<T: Real>(block: &CMatrix<T>, pattern: &CosetPattern) -> CMatrix<T> {
    CMatrix::from_fn(block.rows(), pattern.m_t, |r, c| block[(r, pattern.rows[c])])
}

pub fn temporal_compress<T: Real>(blocks: &SnapshotBlocks<T>, pattern: &CosetPattern) -> SnapshotBlocks<T> {
    SnapshotBlocks {
        blocks: blocks.blocks.iter().map(|b| temporal_compress_block(b, pattern)).collect(),
    }
}

pub const DUMP_MAGIC: [u8; 8] = *b"CPSDSNP1";

/// Streaming writer for the dump format: a 32-byte little-endian header
/// (magic, rows, cols, block count as `u64`) followed by interleaved
/// `(re, im)` `f64` pairs, row-major within each block.
pub struct SnapshotDumpWriter<W: Write> {
    out: W,
    rows: usize,
    cols: usize,
    remaining: usize,
}

impl<W: Write> SnapshotDumpWriter<W> {
    pub fn new(mut out: W, rows: usize, cols: usize, n_blocks: usize) -> Result<Self, SimError> {
        out.write_all(&DUMP_MAGIC)?;
        for v in [rows as u64, cols as u64, n_blocks as u64] {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(Self {
            out,
            rows,
            cols,
            remaining: n_blocks,
        })
    }

    pub fn write_block<T: Real>(&mut self, b: &CMatrix<T>) -> Result<(), SimError> {
        if (b.rows(), b.cols()) != (self.rows, self.cols) {
            return Err(SimError::Dump("blocks differ in shape".into()));
        }
        if self.remaining == 0 {
            return Err(SimError::Dump("more blocks than announced".into()));
        }
        self.remaining -= 1;
        for r in 0..self.rows {
            for c in 0..self.cols {
                let z = b[(r, c)];
                self.out.write_all(&z.re.to_f64_lossy().to_le_bytes())?;
                self.out.write_all(&z.im.to_f64_lossy().to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<W, SimError> {
        if self.remaining != 0 {
            return Err(SimError::Dump(format!("{} blocks missing", self.remaining)));
        }
        self.out.flush()?;
        Ok(self.out)
    }
}

pub fn write_snapshot_dump<T: Real, W: Write>(blocks: &SnapshotBlocks<T>, out: W) -> Result<(), SimError> {
    let (rows, cols) = blocks.shape().unwrap_or((0, 0));
    let mut w = SnapshotDumpWriter::new(out, rows, cols, blocks.len())?;
    for b in &blocks.blocks {
        w.write_block(b)?;
    }
    w.finish().map(|_| ())
}

pub fn read_snapshot_dump<R: Read>(mut input: R) -> Result<SnapshotBlocks<f64>, SimError> {
    let mut header = [0u8; 32];
    input.read_exact(&mut header)?;
    if header[..8] != DUMP_MAGIC {
        return Err(SimError::Dump("bad magic".into()));
    }
    let field = |k: usize| u64::from_le_bytes(header[8 + 8 * k..16 + 8 * k].try_into().unwrap()) as usize;
    let (rows, cols, n) = (field(0), field(1), field(2));
    let mut blocks = Vec::with_capacity(n);
    let mut buf = [0u8; 16];
    for _ in 0..n {
        let mut m = CMatrix::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                input.read_exact(&mut buf)?;
                let re = f64::from_le_bytes(buf[..8].try_into().unwrap());
                let im = f64::from_le_bytes(buf[8..].try_into().unwrap());
                m[(r, c)] = Complex::new(re, im);
            }
        }
        blocks.push(m);
    }
    Ok(SnapshotBlocks { blocks })
}
