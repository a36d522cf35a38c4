//! Closed-form ground truth in `f64` by direct summation. Nothing here goes
//! through the estimator's matrices, so the two can check each other.

use std::f64::consts::PI;

use num_complex::Complex;

use crate::config::{MarkSource, ScenarioConfig};
use crate::estimate::SpectrumMatrix;
use crate::geometry::rational_to_f64;
use crate::model::ArrayGeometry;
use crate::pipeline::{design, run, RunError, RunOptions};
use crate::simulate::CosetPattern;

type C64 = Complex<f64>;

/// `r[m] = sigma² sum_n h[n+m] conj(h[n])`, canonical lag order, `2N-1` lags
/// for `N` taps.
pub fn true_source_autocorr(taps: &[C64], variance: f64) -> Vec<C64> {
    let n = taps.len() as isize;
    let w = (2 * n - 1) as usize;
    let mut r = vec![C64::new(0.0, 0.0); w];
    for m in (1 - n)..n {
        let mut acc = C64::new(0.0, 0.0);
        for k in 0..n {
            let a = k + m;
            if (0..n).contains(&a) {
                acc += taps[a as usize] * taps[k as usize].conj();
            }
        }
        r[m.rem_euclid(2 * n - 1) as usize] = acc * variance;
    }
    r
}

fn steering(theta: f64, positions: &[f64]) -> Vec<C64> {
    positions
        .iter()
        .map(|&p| C64::from_polar(1.0, 2.0 * PI * theta.sin() * p))
        .collect()
}

fn active_positions(geometry: &ArrayGeometry) -> Vec<f64> {
    let d = rational_to_f64(geometry.spacing);
    geometry.active_marks.iter().map(|&m| m as f64 * d).collect()
}

fn wrap(n_t: usize, lag: isize) -> usize {
    lag.rem_euclid(2 * n_t as isize - 1) as usize
}

/// `vec(R_y[k])` for sources at `doas` with autocorrelations `autocorrs`
/// (canonical order, `2N_t-1` lags).
pub fn true_vec_ry(geometry: &ArrayGeometry, doas: &[f64], autocorrs: &[Vec<C64>], noise_variance: f64, lag: isize) -> Vec<C64> {
    let pos = active_positions(geometry);
    let m = pos.len();
    let mut v = vec![C64::new(0.0, 0.0); m * m];
    for (&theta, r) in doas.iter().zip(autocorrs) {
        let n_t = r.len().div_ceil(2);
        if lag.unsigned_abs() >= n_t {
            continue;
        }
        let rk = r[wrap(n_t, lag)];
        let b = steering(theta, &pos);
        for j in 0..m {
            for i in 0..m {
                v[i + j * m] += b[i] * b[j].conj() * rk;
            }
        }
    }
    if lag == 0 {
        for i in 0..m {
            v[i + i * m] += noise_variance;
        }
    }
    v
}

/// Closed-form correlations of a scenario at every stage.
#[derive(Debug, Clone)]
pub struct ExactCorrelations {
    pub n_t: usize,
    pub m_s: usize,
    /// Per source, canonical lag order.
    pub autocorrs: Vec<Vec<C64>>,
    /// `vec(R_y[k])`, indexed by canonical lag position.
    pub vec_ry: Vec<Vec<C64>>,
    /// `vec(C_t R_{y_i,y_j} C_t^T)` per pair `i + j M_s`.
    pub vec_rz: Vec<Vec<C64>>,
}

pub fn exact_correlations(
    geometry: &ArrayGeometry,
    pattern: &CosetPattern,
    doas: &[f64],
    autocorrs: Vec<Vec<C64>>,
    noise_variance: f64,
) -> ExactCorrelations {
    let n_t = pattern.n_t;
    let w = 2 * n_t - 1;
    let vec_ry: Vec<Vec<C64>> = (0..w)
        .map(|idx| {
            let lag = if idx < n_t { idx as isize } else { idx as isize - w as isize };
            true_vec_ry(geometry, doas, &autocorrs, noise_variance, lag)
        })
        .collect();
    let m_s = geometry.active_marks.len();
    let rows = &pattern.rows;
    let m_t = rows.len();
    let vec_rz = (0..m_s * m_s)
        .map(|p| {
            let mut v = Vec::with_capacity(m_t * m_t);
            for &b in rows {
                for &a in rows {
                    let lag = a as isize - b as isize;
                    v.push(vec_ry[wrap(n_t, lag)][p]);
                }
            }
            v
        })
        .collect();
    ExactCorrelations {
        n_t,
        m_s,
        autocorrs,
        vec_ry,
        vec_rz,
    }
}

/// `R̄_s` for sources sitting on grid rows: row `q` holds the autocorrelation
/// of the source placed there, zero elsewhere.
pub fn true_rs_bar(q: usize, n_t: usize, placed: &[(usize, &[C64])]) -> Vec<Vec<C64>> {
    let mut rows = vec![vec![C64::new(0.0, 0.0); 2 * n_t - 1]; q];
    for &(row, r) in placed {
        for (dst, &v) in rows[row].iter_mut().zip(r) {
            *dst += v;
        }
    }
    rows
}

/// `p[k] = sum_m r[m] exp(-j 2 pi k m / W)` by direct summation over signed lags.
pub fn true_spectrum_row(r: &[C64]) -> Vec<C64> {
    let w = r.len();
    let n_t = w.div_ceil(2) as isize;
    (0..w)
        .map(|k| {
            ((1 - n_t)..n_t)
                .map(|m| r[m.rem_euclid(w as isize) as usize] * C64::from_polar(1.0, -2.0 * PI * (k as f64) * (m as f64) / w as f64))
                .sum()
        })
        .collect()
}

/// Runs the same pipeline with every antenna active and no temporal
/// compression: the Nyquist-rate reference the compressed estimate targets.
pub fn nyquist_reference(
    cfg: &ScenarioConfig,
    noise_variance: f64,
    snapshots: usize,
    seed: u64,
) -> Result<SpectrumMatrix<f64>, RunError> {
    let mut c = cfg.clone();
    c.geometry.marks = MarkSource::Explicit((0..c.geometry.antennas).collect());
    c.coset.m_t = c.coset.n_t;
    c.coset.ruler = (c.coset.n_t > 1).then(|| (0..c.coset.n_t).collect());
    c.noise_variance = noise_variance;
    c.snapshots = snapshots;
    c.seed = seed;
    let d = design::<f64>(&c)?;
    let opts = RunOptions::from_config(&c, 1);
    Ok(run(&d, &c.source_specs(), noise_variance, &opts)?.spectrum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Rational;
    use crate::simulate::{design_bandpass, rng_stream, synth_source, Stream};

    #[test]
    fn unit_tap() {
        let r = true_source_autocorr(&[C64::new(1.0, 0.0)], 5.0);
        assert_eq!(r, vec![C64::new(5.0, 0.0)]);
    }

    #[test]
    fn two_tap_average() {
        let h = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        let r = true_source_autocorr(&[h, h], 1.0);
        // canonical order: lag 0, 1, -1
        for (got, want) in r.iter().zip([1.0, 0.5, 0.5]) {
            assert!((got - C64::new(want, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn conjugate_symmetry() {
        let taps = design_bandpass::<f64>((-0.8 * PI, -0.725 * PI), 84).unwrap();
        let r = true_source_autocorr(&taps, 5.0);
        let w = r.len();
        for m in 1..84 {
            assert!((r[w - m] - r[m].conj()).norm() < 1e-12);
        }
    }

    #[test]
    fn matches_empirical_autocorrelation() {
        let taps = design_bandpass::<f64>((0.3, 1.1), 12).unwrap();
        let r = true_source_autocorr(&taps, 2.0);
        let n = 100_000;
        let x = synth_source(&taps, 2.0, n, rng_stream(5, Stream::Source(2)));
        let scale = r[0].re;
        for m in 0..6usize {
            let est: C64 = (m..n).map(|k| x[k] * x[k - m].conj()).sum::<C64>() / (n - m) as f64;
            assert!((est - r[m]).norm() < 8.0 * scale / (n as f64).sqrt(), "lag {m}: {est} vs {}", r[m]);
        }
    }

    #[test]
    fn vec_ry_cases() {
        let geo = ArrayGeometry::new(4, Rational::new(1, 2), vec![0, 1, 3]).unwrap();
        let v = true_vec_ry(&geo, &[], &[], 2.0, 0);
        for j in 0..3 {
            for i in 0..3 {
                let want = if i == j { 2.0 } else { 0.0 };
                assert_eq!(v[i + 3 * j], C64::new(want, 0.0));
            }
        }
        let r = vec![C64::new(3.0, 0.0), C64::new(1.0, 1.0), C64::new(1.0, -1.0)];
        let theta = 0.3;
        let v = true_vec_ry(&geo, &[theta], &[r.clone()], 0.0, 1);
        let b = steering(theta, &[0.0, 0.5, 1.5]);
        for j in 0..3 {
            for i in 0..3 {
                assert!((v[i + 3 * j] - b[j].conj() * b[i] * r[1]).norm() < 1e-14);
            }
        }
        let v = true_vec_ry(&geo, &[theta, -0.6], &[r.clone(), r.clone()], 5.0, 0);
        for i in 0..3 {
            assert!((v[i + 3 * i] - C64::new(11.0, 0.0)).norm() < 1e-13);
        }
    }

    #[test]
    fn exact_rz_matches_selection() {
        let geo = ArrayGeometry::full(2, Rational::new(1, 2)).unwrap();
        let p = CosetPattern::new(4, vec![0, 1, 3]).unwrap();
        let taps = design_bandpass::<f64>((-1.0, 1.0), 4).unwrap();
        let ex = exact_correlations(&geo, &p, &[0.2], vec![true_source_autocorr(&taps, 1.0)], 0.5);
        // entry (a=2, b=0) of pair (1,0) is lag 3
        assert_eq!(ex.vec_rz[1][2], ex.vec_ry[3][1]);
        // entry (a=0, b=2) is lag -3
        assert_eq!(ex.vec_rz[1][6], ex.vec_ry[4][1]);
    }

    #[test]
    fn spectrum_row_of_triangle() {
        let r = vec![C64::new(1.0, 0.0), C64::new(0.5, 0.0), C64::new(0.5, 0.0)];
        let p = true_spectrum_row(&r);
        for (got, want) in p.iter().zip([2.0, 0.5, 0.5]) {
            assert!((got - C64::new(want, 0.0)).norm() < 1e-14);
        }
    }
}
