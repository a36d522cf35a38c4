//! Reconstruction: compressed pair correlations, lag recovery through the
//! repetition matrix, per-lag angular solves against `B* ⊙ B`, the 2D
//! spectrum and peak picking.

use std::f64::consts::PI;

use num_complex::Complex;
use num_traits::Zero;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{norm2, CMatrix, QrFactor};
use crate::model::{rank_report, AngularGrid, ManifoldMatrices, RankReport};
use crate::scalar::{cis, Real};
use crate::simulate::{CosetPattern, SnapshotBlocks};

#[derive(Debug, Error)]
pub enum EstimateError {
    #[error("R_ct is rank deficient: no coset pair covers lags {missing:?}")]
    RctRankDeficient { missing: Vec<isize> },
    #[error("B* ⊙ B is rank deficient (rank {} of {})", .0.rank, .0.cols)]
    KrRankDeficient(RankReport),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("no snapshot blocks")]
    NoBlocks,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

/// Lag carried by canonical index `idx`: `[0..N_t-1, 1-N_t..-1]`.
pub fn canonical_lag(n_t: usize, idx: usize) -> isize {
    if idx < n_t {
        idx as isize
    } else {
        idx as isize - (2 * n_t - 1) as isize
    }
}

pub fn lag_index(n_t: usize, lag: isize) -> Option<usize> {
    let n = n_t as isize;
    if lag <= -n || lag >= n {
        return None;
    }
    Some(lag.rem_euclid(2 * n - 1) as usize)
}

pub fn canonical_lags(n_t: usize) -> Vec<isize> {
    (0..2 * n_t - 1).map(|i| canonical_lag(n_t, i)).collect()
}

/// `N_t² x (2N_t-1)` selection matrix with `vec(R) = T r` for Toeplitz `R`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepetitionMatrix {
    pub n_t: usize,
    /// 0-based column holding the single 1 of each row.
    pub row_targets: Vec<usize>,
}

pub fn repetition_matrix(n_t: usize) -> RepetitionMatrix {
    assert!(n_t >= 1);
    let w = 2 * n_t - 1;
    let row_targets = (0..n_t * n_t).map(|i| (i + (n_t - 1).saturating_sub(1) * (i / n_t)) % w).collect();
    RepetitionMatrix { n_t, row_targets }
}

impl RepetitionMatrix {
    pub fn apply<T: Real>(&self, lags: &[Complex<T>]) -> Vec<Complex<T>> {
        self.row_targets.iter().map(|&t| lags[t]).collect()
    }

    pub fn to_dense<T: Real>(&self) -> CMatrix<T> {
        selection_matrix(&self.row_targets, 2 * self.n_t - 1)
    }
}

fn selection_matrix<T: Real>(targets: &[usize], cols: usize) -> CMatrix<T> {
    let mut m = CMatrix::zeros(targets.len(), cols);
    for (r, &c) in targets.iter().enumerate() {
        m[(r, c)] = Complex::new(T::one(), T::zero());
    }
    m
}

/// `R_ct = (C_t ⊗ C_t) T`, one 1 per row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rct {
    pub n_t: usize,
    pub m_t: usize,
    pub row_targets: Vec<usize>,
    /// Number of rows hitting each lag column.
    pub column_counts: Vec<usize>,
    pub full_column_rank: bool,
}

pub fn build_rct(pattern: &CosetPattern) -> Rct {
    let t = repetition_matrix(pattern.n_t);
    let m = pattern.m_t;
    let mut row_targets = Vec::with_capacity(m * m);
    for b in 0..m {
        for a in 0..m {
            row_targets.push(t.row_targets[pattern.rows[a] + pattern.rows[b] * pattern.n_t]);
        }
    }
    let mut column_counts = vec![0; 2 * pattern.n_t - 1];
    for &c in &row_targets {
        column_counts[c] += 1;
    }
    let full_column_rank = column_counts.iter().all(|&c| c > 0);
    Rct {
        n_t: pattern.n_t,
        m_t: m,
        row_targets,
        column_counts,
        full_column_rank,
    }
}

impl Rct {
    pub fn to_dense<T: Real>(&self) -> CMatrix<T> {
        selection_matrix(&self.row_targets, 2 * self.n_t - 1)
    }

    pub fn missing_lags(&self) -> Vec<isize> {
        self.column_counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == 0)
            .map(|(i, _)| canonical_lag(self.n_t, i))
            .collect()
    }
}

/// `vec(R_{z_i,z_j})` for every ordered antenna pair, pair index `i + j M_s`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairCorrelations<T> {
    pub m_s: usize,
    pub m_t: usize,
    pub n_blocks: usize,
    pub vec_rz: Vec<Vec<Complex<T>>>,
}

const FLUSH_BLOCKS: usize = 64;

/// Streaming average of `z_i z_j^H` over blocks. Each pair is summed in
/// block order whatever the worker count, so results do not depend on it.
pub struct CorrelationAccumulator<T> {
    m_s: usize,
    m_t: usize,
    workers: usize,
    count: usize,
    sums: Vec<Vec<Complex<T>>>,
    pending: Vec<CMatrix<T>>,
}

impl<T: Real> CorrelationAccumulator<T> {
    pub fn new(m_s: usize, m_t: usize, workers: usize) -> Self {
        Self {
            m_s,
            m_t,
            workers: workers.max(1),
            count: 0,
            sums: vec![vec![Complex::zero(); m_t * m_t]; m_s * m_s],
            pending: Vec::with_capacity(FLUSH_BLOCKS),
        }
    }

    pub fn add_block(&mut self, block: CMatrix<T>) -> Result<(), EstimateError> {
        if (block.rows(), block.cols()) != (self.m_s, self.m_t) {
            return Err(EstimateError::Shape(format!(
                "block is {}x{}, expected {}x{}",
                block.rows(),
                block.cols(),
                self.m_s,
                self.m_t
            )));
        }
        self.pending.push(block);
        self.count += 1;
        if self.pending.len() == FLUSH_BLOCKS {
            self.flush();
        }
        Ok(())
    }

    fn flush(&mut self) {
        let (m_s, m_t) = (self.m_s, self.m_t);
        let blocks = std::mem::take(&mut self.pending);
        let per = self.sums.len().div_ceil(self.workers).max(1);
        let accumulate = |first: usize, chunk: &mut [Vec<Complex<T>>]| {
            for blk in &blocks {
                for (off, sum) in chunk.iter_mut().enumerate() {
                    let p = first + off;
                    let (i, j) = (p % m_s, p / m_s);
                    for b in 0..m_t {
                        let zj = blk[(j, b)].conj();
                        for a in 0..m_t {
                            sum[a + b * m_t] += blk[(i, a)] * zj;
                        }
                    }
                }
            }
        };
        if self.workers == 1 {
            accumulate(0, &mut self.sums);
        } else {
            std::thread::scope(|s| {
                for (c, chunk) in self.sums.chunks_mut(per).enumerate() {
                    let acc = &accumulate;
                    s.spawn(move || acc(c * per, chunk));
                }
            });
        }
        self.pending = blocks;
        self.pending.clear();
    }

    pub fn finish(mut self) -> Result<PairCorrelations<T>, EstimateError> {
        if self.count == 0 {
            return Err(EstimateError::NoBlocks);
        }
        self.flush();
        let scale = T::one() / T::of_usize(self.count);
        for sum in &mut self.sums {
            for v in sum.iter_mut() {
                *v = *v * scale;
            }
        }
        Ok(PairCorrelations {
            m_s: self.m_s,
            m_t: self.m_t,
            n_blocks: self.count,
            vec_rz: self.sums,
        })
    }
}

pub fn pair_correlations<T: Real>(blocks: &SnapshotBlocks<T>, workers: usize) -> Result<PairCorrelations<T>, EstimateError> {
    let (m_s, m_t) = blocks.shape().ok_or(EstimateError::NoBlocks)?;
    let mut acc = CorrelationAccumulator::new(m_s, m_t, workers);
    for b in &blocks.blocks {
        acc.add_block(b.clone())?;
    }
    acc.finish()
}

/// Recovered lag vectors `r_{y_i,y_j}` in canonical lag order.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationSet<T> {
    pub m_s: usize,
    pub n_t: usize,
    pub lags: Vec<Vec<Complex<T>>>,
    pub residual_norms: Vec<T>,
}

pub fn recover_lags<T: Real>(rct: &Rct, pc: &PairCorrelations<T>) -> Result<CorrelationSet<T>, EstimateError> {
    if !rct.full_column_rank {
        return Err(EstimateError::RctRankDeficient {
            missing: rct.missing_lags(),
        });
    }
    if pc.m_t != rct.m_t {
        return Err(EstimateError::Shape(format!("pairs carry M_t = {}, R_ct has {}", pc.m_t, rct.m_t)));
    }
    let qr = QrFactor::new(&rct.to_dense::<T>());
    let mut lags = Vec::with_capacity(pc.vec_rz.len());
    let mut residual_norms = Vec::with_capacity(pc.vec_rz.len());
    for v in &pc.vec_rz {
        let sol = qr.solve(v);
        lags.push(sol.x);
        residual_norms.push(sol.residual_norm);
    }
    let set = CorrelationSet {
        m_s: pc.m_s,
        n_t: rct.n_t,
        lags,
        residual_norms,
    };
    if set.lags.iter().flatten().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
        return Err(EstimateError::NonFinite("recovered lags"));
    }
    Ok(set)
}

impl<T: Real> CorrelationSet<T> {
    pub fn pair(&self, i: usize, j: usize) -> &[Complex<T>] {
        &self.lags[i + j * self.m_s]
    }

    /// Averages `r_ij[-k]` with `conj(r_ji[k])`.
    pub fn symmetrize(&mut self) {
        let m = self.m_s;
        let w = 2 * self.n_t - 1;
        let half = T::of(0.5);
        let old = self.lags.clone();
        for j in 0..m {
            for i in 0..m {
                for idx in 0..w {
                    let neg = (w - idx) % w;
                    let a = old[i + j * m][neg];
                    let b = old[j + i * m][idx].conj();
                    self.lags[i + j * m][neg] = (a + b) * half;
                }
            }
        }
    }
}

/// `vec(R_y[k])`, entry `i + j M_s` = `r_{y_i,y_j}[k]`.
pub fn assemble_spatial<T: Real>(corr: &CorrelationSet<T>, lag: isize) -> Vec<Complex<T>> {
    let idx = lag_index(corr.n_t, lag).expect("lag outside [1-N_t, N_t-1]");
    corr.lags.iter().map(|r| r[idx]).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode", content = "variance")]
pub enum NoiseMode {
    Known(f64),
    Estimate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseEstimator {
    Known,
    /// Joint LS with `vec(I)` appended to `B* ⊙ B`.
    JointLs,
    /// `vec(I) = (B* ⊙ B) c` lies in the column span; the noise shows up as a
    /// floor `sigma² c_q` over every bin of row `q` and is read off by median
    /// over rows without a detected source.
    SpectralFloor,
}

#[derive(Debug, Clone)]
pub struct AngularSolution<T> {
    /// `Q x (2N_t-1)` in canonical lag order.
    pub rs: CMatrix<T>,
    pub sigma_n_hat: T,
    pub estimator: NoiseEstimator,
    pub kr_rank: RankReport,
    pub augmented_rank: Option<RankReport>,
    /// Per lag, canonical order.
    pub residual_norms: Vec<T>,
}

pub fn recover_angular<T: Real>(
    manifold: &ManifoldMatrices<T>,
    corr: &CorrelationSet<T>,
    mode: NoiseMode,
) -> Result<AngularSolution<T>, EstimateError> {
    let kr = &manifold.kr;
    let m_s = corr.m_s;
    if kr.rows() != m_s * m_s {
        return Err(EstimateError::Shape(format!(
            "B* ⊙ B has {} rows, correlations give {}",
            kr.rows(),
            m_s * m_s
        )));
    }
    let kr_rank = rank_report(kr, None);
    if !kr_rank.full_column_rank {
        return Err(EstimateError::KrRankDeficient(kr_rank));
    }
    let n_t = corr.n_t;
    let w = 2 * n_t - 1;
    let q = kr.cols();
    let qr = QrFactor::new(kr);
    let mut rs = CMatrix::zeros(q, w);
    let mut residual_norms = vec![T::zero(); w];
    for idx in 1..w {
        let sol = qr.solve(&assemble_spatial(corr, canonical_lag(n_t, idx)));
        rs.col_mut(idx).copy_from_slice(&sol.x);
        residual_norms[idx] = sol.residual_norm;
    }

    let ry0 = assemble_spatial(corr, 0);
    let noise = &manifold.noise_column;
    let (sigma_n_hat, estimator, augmented_rank) = match mode {
        NoiseMode::Known(s2) => {
            let s2 = T::of(s2);
            let rhs: Vec<_> = ry0.iter().zip(noise).map(|(&r, &v)| r - v * s2).collect();
            let sol = qr.solve(&rhs);
            rs.col_mut(0).copy_from_slice(&sol.x);
            residual_norms[0] = sol.residual_norm;
            (s2, NoiseEstimator::Known, None)
        }
        NoiseMode::Estimate => {
            let aug = rank_report(kr, Some(noise));
            if aug.full_column_rank {
                let sol = QrFactor::new(&kr.with_column(noise)).solve(&ry0);
                rs.col_mut(0).copy_from_slice(&sol.x[..q]);
                residual_norms[0] = sol.residual_norm;
                (sol.x[q].re, NoiseEstimator::JointLs, Some(aug))
            } else {
                let c = qr.solve(noise).x;
                let raw = qr.solve(&ry0);
                rs.col_mut(0).copy_from_slice(&raw.x);
                let s2 = spectral_floor(&dft_rows(&rs), &c);
                for (x, &cq) in rs.col_mut(0).iter_mut().zip(&c) {
                    *x -= cq * s2;
                }
                residual_norms[0] = raw.residual_norm;
                (s2, NoiseEstimator::SpectralFloor, Some(aug))
            }
        }
    };
    if rs.as_slice().iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) || !sigma_n_hat.is_finite() {
        return Err(EstimateError::NonFinite("angular solution"));
    }
    Ok(AngularSolution {
        rs,
        sigma_n_hat,
        estimator,
        kr_rank,
        augmented_rank,
        residual_norms,
    })
}

/// Peak threshold used when locating sources for the noise floor.
pub const FLOOR_PEAK_THRESHOLD: f64 = 0.25;

/// Median of `Re P[q,k] / c_q` over the rows that host no detected source.
/// A first all-row median removes the floor so peaks can be located.
fn spectral_floor<T: Real>(p: &CMatrix<T>, c: &[Complex<T>]) -> T {
    let cmax = c.iter().map(|z| z.re.abs()).fold(T::zero(), T::max);
    let usable: Vec<bool> = c.iter().map(|z| z.re.abs() >= cmax * T::of(0.1)).collect();
    let ratios = |rows: &dyn Fn(usize) -> bool| {
        let mut v = Vec::new();
        for (q, cq) in c.iter().enumerate() {
            if usable[q] && rows(q) {
                v.extend((0..p.cols()).map(|k| p[(q, k)].re / cq.re));
            }
        }
        v
    };
    let first = median(&mut ratios(&|_| true));
    let shifted = CMatrix::from_fn(p.rows(), p.cols(), |q, k| p[(q, k)] - c[q] * first);
    let spec = SpectrumMatrix {
        values: shifted,
        angles: vec![0.0; p.rows()],
        freqs: frequency_grid(p.cols().div_ceil(2)),
        sigma_n_hat: 0.0,
    };
    let mut occupied = vec![false; p.rows()];
    for d in find_peaks(&spec, FLOOR_PEAK_THRESHOLD) {
        occupied[d.grid_index] = true;
        if let Some(s) = d.split_with {
            occupied[s] = true;
        }
    }
    let mut rest = ratios(&|q| !occupied[q]);
    if rest.is_empty() {
        first
    } else {
        median(&mut rest)
    }
}

fn median<T: Real>(v: &mut [T]) -> T {
    if v.is_empty() {
        return T::zero();
    }
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) * T::of(0.5)
    }
}

/// Row-wise `(2N_t-1)`-point DFT, `exp(-j 2 pi k m / (2N_t-1))`.
pub fn dft_rows<T: Real>(rs: &CMatrix<T>) -> CMatrix<T> {
    let w = rs.cols();
    let twiddle: Vec<Complex<T>> = (0..w).map(|n| cis(-T::TAU() * T::of_usize(n) / T::of_usize(w))).collect();
    let mut out = CMatrix::zeros(rs.rows(), w);
    for k in 0..w {
        for m in 0..w {
            let f = twiddle[(k * m) % w];
            let src = rs.col(m);
            let dst = out.col_mut(k);
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += s * f;
            }
        }
    }
    out
}

/// Bin `k` at `2 pi k / W`, folded into `(-pi, pi]`.
pub fn frequency_grid(n_t: usize) -> Vec<f64> {
    let w = 2 * n_t - 1;
    (0..w)
        .map(|k| {
            let f = 2.0 * PI * k as f64 / w as f64;
            if f > PI {
                f - 2.0 * PI
            } else {
                f
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct SpectrumMatrix<T> {
    /// `Q x (2N_t-1)`, bins in DFT order.
    pub values: CMatrix<T>,
    pub angles: Vec<f64>,
    pub freqs: Vec<f64>,
    pub sigma_n_hat: f64,
}

pub fn spectrum<T: Real>(rs: &CMatrix<T>, grid: &AngularGrid<T>, sigma_n_hat: T) -> SpectrumMatrix<T> {
    let n_t = rs.cols().div_ceil(2);
    SpectrumMatrix {
        values: dft_rows(rs),
        angles: grid.angles().iter().map(|a| a.to_f64_lossy()).collect(),
        freqs: frequency_grid(n_t),
        sigma_n_hat: sigma_n_hat.to_f64_lossy(),
    }
}

impl<T: Real> SpectrumMatrix<T> {
    pub fn bin_width(&self) -> f64 {
        2.0 * PI / self.freqs.len() as f64
    }

    /// Bin order sorted by frequency.
    pub fn ascending_bins(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.freqs.len()).collect();
        idx.sort_by(|&a, &b| self.freqs[a].total_cmp(&self.freqs[b]));
        idx
    }

    /// `m(q) = max(sum_k Re P[q,k], 0)`.
    pub fn angular_marginal(&self) -> Vec<f64> {
        (0..self.values.rows())
            .map(|q| self.values.row(q).iter().map(|z| z.re.to_f64_lossy()).sum::<f64>().max(0.0))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub grid_index: usize,
    pub angle_deg: f64,
    /// Neighbouring row sharing the source power, if any.
    pub split_with: Option<usize>,
    /// Occupied bands `(lo, hi)` in rad/sample, bin centres.
    pub bands: Vec<(f64, f64)>,
    /// Supported bins in DFT order.
    pub bins: Vec<usize>,
    /// Power over the support, normalised so a lone source reads its variance.
    pub power: f64,
}

/// Neighbours above this share of the peak marginal count as split cells.
pub const SPLIT_FRACTION: f64 = 0.5;

pub fn find_peaks<T: Real>(spec: &SpectrumMatrix<T>, threshold: f64) -> Vec<Detection> {
    let m = spec.angular_marginal();
    let q_len = m.len();
    let peak = m.iter().cloned().fold(0.0, f64::max);
    if q_len == 0 || peak <= 0.0 {
        return Vec::new();
    }
    let w = spec.freqs.len();
    let mut out = Vec::new();
    let mut q = 0;
    while q < q_len {
        let mut end = q;
        while end + 1 < q_len && m[end + 1] == m[q] {
            end += 1;
        }
        let left_ok = q == 0 || m[q - 1] < m[q];
        let right_ok = end + 1 == q_len || m[end + 1] < m[q];
        if left_ok && right_ok && m[q] >= threshold * peak && m[q] > 0.0 {
            let neighbour = [q.checked_sub(1), (end + 1 < q_len).then_some(end + 1)]
                .into_iter()
                .flatten()
                .filter(|&n| m[n] >= SPLIT_FRACTION * m[q])
                .max_by(|&a, &b| m[a].total_cmp(&m[b]).then(b.cmp(&a)));
            let split_with = if end > q { Some(q + 1) } else { neighbour };
            let mut rows = vec![q];
            rows.extend(split_with);
            let profile: Vec<f64> = (0..w)
                .map(|k| rows.iter().map(|&r| spec.values[(r, k)].re.to_f64_lossy()).sum())
                .collect();
            let top = profile.iter().cloned().fold(0.0, f64::max);
            let bins: Vec<usize> = (0..w).filter(|&k| top > 0.0 && profile[k] >= threshold * top).collect();
            let power = bins.iter().map(|&k| profile[k]).sum::<f64>() / w as f64;
            out.push(Detection {
                grid_index: q,
                angle_deg: spec.angles[q].to_degrees(),
                split_with,
                bands: bands_from_bins(&bins, &spec.freqs, spec.bin_width()),
                bins,
                power,
            });
        }
        q = end + 1;
    }
    out
}

/// Contiguous runs of supported bins, in ascending frequency.
fn bands_from_bins(bins: &[usize], freqs: &[f64], width: f64) -> Vec<(f64, f64)> {
    let mut f: Vec<f64> = bins.iter().map(|&k| freqs[k]).collect();
    f.sort_by(f64::total_cmp);
    let mut bands: Vec<(f64, f64)> = Vec::new();
    for x in f {
        match bands.last_mut() {
            Some(b) if x - b.1 < 1.5 * width => b.1 = x,
            _ => bands.push((x, x)),
        }
    }
    // join a band wrapping through pi
    if bands.len() > 1 {
        let first = bands[0];
        let last = *bands.last().unwrap();
        if first.0 + 2.0 * PI - last.1 < 1.5 * width {
            bands.pop();
            bands[0] = (last.0, first.1 + 2.0 * PI);
        }
    }
    bands
}

/// Largest residual and root-mean-square residual of a stage.
pub fn residual_summary<T: Real>(r: &[T]) -> (f64, f64) {
    let v: Vec<Complex<T>> = r.iter().map(|&x| Complex::new(x, T::zero())).collect();
    let max = r.iter().map(|x| x.to_f64_lossy()).fold(0.0, f64::max);
    let rms = if r.is_empty() {
        0.0
    } else {
        norm2(&v).to_f64_lossy() / (r.len() as f64).sqrt()
    };
    (max, rms)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(x: f64) -> Complex<f64> {
        Complex::new(x, 0.0)
    }

    #[test]
    fn repetition_targets() {
        let one_based = |n| repetition_matrix(n).row_targets.iter().map(|t| t + 1).collect::<Vec<_>>();
        assert_eq!(one_based(1), vec![1]);
        assert_eq!(one_based(2), vec![1, 2, 3, 1]);
        assert_eq!(one_based(3), vec![1, 2, 3, 5, 1, 2, 4, 5, 1]);
    }

    #[test]
    fn lag_order() {
        assert_eq!(canonical_lags(3), vec![0, 1, 2, -2, -1]);
        for n in 1..6 {
            for (i, l) in canonical_lags(n).into_iter().enumerate() {
                assert_eq!(lag_index(n, l), Some(i));
            }
        }
        assert_eq!(lag_index(3, 3), None);
    }

    #[test]
    fn rct_coverage() {
        let full = build_rct(&CosetPattern::new(5, (0..5).collect()).unwrap());
        assert_eq!(full.row_targets, repetition_matrix(5).row_targets);
        assert!(full.full_column_rank);

        let ruler = build_rct(&CosetPattern::new(4, vec![0, 1, 3]).unwrap());
        assert_eq!(ruler.row_targets.len(), 9);
        assert_eq!(ruler.column_counts.len(), 7);
        assert!(ruler.full_column_rank);

        let gap = build_rct(&CosetPattern::new(4, vec![0, 2]).unwrap());
        assert!(!gap.full_column_rank);
        assert_eq!(gap.missing_lags(), vec![1, 3, -3, -1]);
    }

    #[test]
    fn single_block_outer_product() {
        let z = CMatrix::from_fn(2, 2, |r, k| Complex::new((r + 1) as f64, k as f64));
        let pc = pair_correlations(&SnapshotBlocks { blocks: vec![z.clone()] }, 1).unwrap();
        for j in 0..2 {
            for i in 0..2 {
                let v = &pc.vec_rz[i + j * 2];
                for b in 0..2 {
                    for a in 0..2 {
                        assert_eq!(v[a + b * 2], z[(i, a)] * z[(j, b)].conj());
                    }
                }
            }
        }
    }

    #[test]
    fn worker_count_does_not_change_sums() {
        let blocks = SnapshotBlocks {
            blocks: (0..150)
                .map(|n| CMatrix::from_fn(3, 4, |r, k| cis(0.37 * (n * 12 + r * 4 + k) as f64) * (1.0 + r as f64)))
                .collect(),
        };
        let one = pair_correlations(&blocks, 1).unwrap();
        for w in [2, 3, 8, 40] {
            assert_eq!(pair_correlations(&blocks, w).unwrap(), one);
        }
    }

    #[test]
    fn lag_recovery_on_exact_toeplitz() {
        let n_t = 4;
        let r: Vec<Complex<f64>> = canonical_lags(n_t)
            .iter()
            .map(|&l| Complex::new(1.0 / (1.0 + l.abs() as f64), 0.3 * l as f64))
            .collect();
        let t = repetition_matrix(n_t);
        for rows in [vec![0, 1, 2, 3], vec![0, 1, 3]] {
            let p = CosetPattern::new(n_t, rows.clone()).unwrap();
            let rct = build_rct(&p);
            let vec_rz = rct.row_targets.iter().map(|&k| r[k]).collect();
            let pc = PairCorrelations {
                m_s: 1,
                m_t: rows.len(),
                n_blocks: 1,
                vec_rz: vec![vec_rz],
            };
            let set = recover_lags(&rct, &pc).unwrap();
            for (a, b) in set.lags[0].iter().zip(&r) {
                assert!((a - b).norm() < 1e-12);
            }
            assert_eq!(t.apply(&set.lags[0]).len(), 16);
        }
    }

    #[test]
    fn rank_deficient_rct_refused() {
        let rct = build_rct(&CosetPattern::new(4, vec![0, 2]).unwrap());
        let pc = PairCorrelations {
            m_s: 1,
            m_t: 2,
            n_blocks: 1,
            vec_rz: vec![vec![c(1.0); 4]],
        };
        assert!(matches!(recover_lags(&rct, &pc), Err(EstimateError::RctRankDeficient { .. })));
    }

    #[test]
    fn spatial_ordering() {
        let set = CorrelationSet {
            m_s: 2,
            n_t: 2,
            lags: vec![
                vec![c(11.0), c(0.0), c(0.0)],
                vec![c(21.0), c(0.0), c(0.0)],
                vec![c(12.0), c(0.0), c(0.0)],
                vec![c(22.0), c(0.0), c(0.0)],
            ],
            residual_norms: vec![0.0; 4],
        };
        assert_eq!(assemble_spatial(&set, 0), vec![c(11.0), c(21.0), c(12.0), c(22.0)]);
    }

    #[test]
    fn symmetrize_enforces_hermitian_pairing() {
        let mut set = CorrelationSet {
            m_s: 2,
            n_t: 2,
            lags: (0..4)
                .map(|p| (0..3).map(|k| Complex::new((p * 3 + k) as f64, (p + k) as f64 * 0.5)).collect())
                .collect(),
            residual_norms: vec![0.0; 4],
        };
        set.symmetrize();
        for i in 0..2 {
            for j in 0..2 {
                for l in [-1isize, 0, 1] {
                    let a = set.pair(i, j)[lag_index(2, -l).unwrap()];
                    let b = set.pair(j, i)[lag_index(2, l).unwrap()].conj();
                    assert!((a - b).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn impulse_and_triangle_spectra() {
        let rs = CMatrix::from_fn(1, 5, |_, m| if m == 0 { c(2.5) } else { c(0.0) });
        let p = dft_rows(&rs);
        assert!(p.row(0).iter().all(|z| (z - c(2.5)).norm() < 1e-14));

        let tri = CMatrix::from_col_major(1, 3, vec![c(1.0), c(0.5), c(0.5)]);
        let p = dft_rows(&tri);
        for (k, want) in [2.0, 0.5, 0.5].iter().enumerate() {
            assert!((p[(0, k)] - c(*want)).norm() < 1e-14);
        }
    }

    #[test]
    fn frequency_grid_wraps() {
        let f = frequency_grid(2);
        assert_eq!(f.len(), 3);
        assert!((f[1] - 2.0 * PI / 3.0).abs() < 1e-15);
        assert!((f[2] + 2.0 * PI / 3.0).abs() < 1e-15);
        assert!(frequency_grid(84).iter().all(|&x| x > -PI && x <= PI));
    }

    fn spec_from(values: CMatrix<f64>) -> SpectrumMatrix<f64> {
        let q = values.rows();
        let n_t = values.cols().div_ceil(2);
        SpectrumMatrix {
            values,
            angles: (0..q).map(|i| i as f64 * 0.1).collect(),
            freqs: frequency_grid(n_t),
            sigma_n_hat: 0.0,
        }
    }

    #[test]
    fn zero_spectrum_has_no_peaks() {
        assert!(find_peaks(&spec_from(CMatrix::zeros(4, 5)), 0.25).is_empty());
    }

    #[test]
    fn plateau_reports_lowest_index() {
        let rows = [0.0, 1.0, 3.0, 3.0, 1.0, 0.0, 5.0];
        let v = CMatrix::from_fn(7, 3, |q, k| if k == 0 { c(rows[q]) } else { c(0.0) });
        let d = find_peaks(&spec_from(v), 0.25);
        let idx: Vec<usize> = d.iter().map(|x| x.grid_index).collect();
        assert_eq!(idx, vec![2, 6]);
        assert_eq!(d[0].split_with, Some(3));
    }

    #[test]
    fn rising_plateau_is_not_a_peak() {
        let rows = [1.0, 3.0, 3.0, 5.0];
        let v = CMatrix::from_fn(4, 1, |q, _| c(rows[q]));
        let d = find_peaks(&spec_from(v), 0.1);
        assert_eq!(d.iter().map(|x| x.grid_index).collect::<Vec<_>>(), vec![3]);
    }

    #[test]
    fn band_wrapping_through_pi() {
        let w = 2.0 * PI / 7.0;
        let freqs = frequency_grid(4);
        // bins 3 and 4 straddle pi
        let b = bands_from_bins(&[3, 4], &freqs, w);
        assert_eq!(b.len(), 1);
        assert!((b[0].0 - freqs[3]).abs() < 1e-12);
        assert!((b[0].1 - (freqs[4] + 2.0 * PI)).abs() < 1e-12);
        let b = bands_from_bins(&[0, 1, 5], &freqs, w);
        assert_eq!(b.len(), 2);
    }
}
