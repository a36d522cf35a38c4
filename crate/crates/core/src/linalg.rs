//! Dense complex linear algebra: a column-major matrix, Householder QR for
//! least squares, and one-sided Jacobi singular values for rank reports.

use std::ops::{Index, IndexMut};

use num_complex::Complex;
use num_traits::{One, Zero};

use crate::scalar::Real;

/// Column-major dense complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<Complex<T>>,
}

impl<T: Real> CMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Complex::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Complex::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex<T>) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for c in 0..cols {
            for r in 0..rows {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from column-major storage.
    pub fn from_col_major(rows: usize, cols: usize, data: Vec<Complex<T>>) -> Self {
        assert_eq!(data.len(), rows * cols, "storage length mismatch");
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Column-major storage, i.e. `vec(self)`.
    #[inline]
    pub fn as_slice(&self) -> &[Complex<T>] {
        &self.data
    }

    #[inline]
    pub fn col(&self, c: usize) -> &[Complex<T>] {
        &self.data[c * self.rows..(c + 1) * self.rows]
    }

    #[inline]
    pub fn col_mut(&mut self, c: usize) -> &mut [Complex<T>] {
        &mut self.data[c * self.rows..(c + 1) * self.rows]
    }

    pub fn row(&self, r: usize) -> Vec<Complex<T>> {
        (0..self.cols).map(|c| self[(r, c)]).collect()
    }

    /// Appends a column on the right.
    pub fn with_column(&self, column: &[Complex<T>]) -> Self {
        assert_eq!(column.len(), self.rows);
        let mut data = self.data.clone();
        data.extend_from_slice(column);
        Self {
            rows: self.rows,
            cols: self.cols + 1,
            data,
        }
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self::from_fn(rows.len(), self.cols, |r, c| self[(rows[r], c)])
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)].conj())
    }

    pub fn mul_vec(&self, x: &[Complex<T>]) -> Vec<Complex<T>> {
        assert_eq!(x.len(), self.cols);
        let mut out = vec![Complex::zero(); self.rows];
        for (c, &xc) in x.iter().enumerate() {
            if xc.is_zero() {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(self.col(c)) {
                *o += a * xc;
            }
        }
        out
    }

    pub fn matmul(&self, rhs: &Self) -> Self {
        assert_eq!(self.cols, rhs.rows);
        let mut out = Self::zeros(self.rows, rhs.cols);
        for c in 0..rhs.cols {
            let prod = self.mul_vec(rhs.col(c));
            out.col_mut(c).copy_from_slice(&prod);
        }
        out
    }

    pub fn frobenius_norm(&self) -> T {
        norm2(&self.data)
    }

    pub fn map(&self, f: impl Fn(Complex<T>) -> Complex<T>) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&z| f(z)).collect(),
        }
    }

    pub fn sub(&self, rhs: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

impl<T> Index<(usize, usize)> for CMatrix<T> {
    type Output = Complex<T>;
    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &Complex<T> {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[c * self.rows + r]
    }
}

impl<T> IndexMut<(usize, usize)> for CMatrix<T> {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut Complex<T> {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[c * self.rows + r]
    }
}

/// Euclidean norm of a complex vector, scaled to avoid overflow.
pub fn norm2<T: Real>(v: &[Complex<T>]) -> T {
    let scale = v.iter().fold(T::zero(), |m, z| m.max(z.re.abs()).max(z.im.abs()));
    if scale.is_zero() {
        return T::zero();
    }
    let ss = v.iter().fold(T::zero(), |acc, z| {
        let (a, b) = (z.re / scale, z.im / scale);
        acc + a * a + b * b
    });
    scale * ss.sqrt()
}

/// `x^H y`.
#[inline]
pub fn dotc<T: Real>(x: &[Complex<T>], y: &[Complex<T>]) -> Complex<T> {
    x.iter().zip(y).fold(Complex::zero(), |acc, (a, b)| acc + a.conj() * b)
}

/// Thin Householder QR factorization of a tall matrix, reusable across
/// right-hand sides.
#[derive(Debug, Clone)]
pub struct QrFactor<T> {
    rows: usize,
    cols: usize,
    /// Householder vectors, one per column, each of length `rows - k`.
    reflectors: Vec<Vec<Complex<T>>>,
    /// Upper-triangular factor, `cols x cols`, column-major.
    r: CMatrix<T>,
}

/// Least-squares solution together with its residual norm.
#[derive(Debug, Clone)]
pub struct LsSolution<T> {
    pub x: Vec<Complex<T>>,
    pub residual_norm: T,
}

impl<T: Real> QrFactor<T> {
    pub fn new(a: &CMatrix<T>) -> Self {
        let (m, n) = (a.rows(), a.cols());
        assert!(m >= n, "QR needs a tall matrix ({m}x{n})");
        let mut work = a.clone();
        let mut reflectors = Vec::with_capacity(n);
        for k in 0..n {
            let x: Vec<Complex<T>> = work.col(k)[k..].to_vec();
            let alpha = norm2(&x);
            let mut v = x;
            if alpha.is_zero() {
                reflectors.push(Vec::new());
                continue;
            }
            let phase = if v[0].norm().is_zero() {
                Complex::one()
            } else {
                v[0] / v[0].norm()
            };
            // v = x + phase * |x| e1 avoids cancellation
            v[0] += phase * alpha;
            let vnorm = norm2(&v);
            for z in v.iter_mut() {
                *z = *z / vnorm;
            }
            for c in k..n {
                let col = &mut work.col_mut(c)[k..];
                let s = dotc(&v, col);
                let two_s = s + s;
                for (z, &vi) in col.iter_mut().zip(&v) {
                    *z -= vi * two_s;
                }
            }
            reflectors.push(v);
        }
        let r = CMatrix::from_fn(n, n, |i, j| if i <= j { work[(i, j)] } else { Complex::zero() });
        Self {
            rows: m,
            cols: n,
            reflectors,
            r,
        }
    }

    pub fn r(&self) -> &CMatrix<T> {
        &self.r
    }

    /// Applies `Q^H` in place.
    fn apply_qh(&self, b: &mut [Complex<T>]) {
        for (k, v) in self.reflectors.iter().enumerate() {
            if v.is_empty() {
                continue;
            }
            let tail = &mut b[k..];
            let s = dotc(v, tail);
            let two_s = s + s;
            for (z, &vi) in tail.iter_mut().zip(v) {
                *z -= vi * two_s;
            }
        }
    }

    /// Smallest-to-largest ratio of `|R_kk|`; zero means a detected rank
    /// deficiency.
    pub fn diagonal_ratio(&self) -> T {
        let d: Vec<T> = (0..self.cols).map(|k| self.r[(k, k)].norm()).collect();
        let max = d.iter().copied().fold(T::zero(), T::max);
        if max.is_zero() {
            return T::zero();
        }
        d.iter().copied().fold(T::infinity(), T::min) / max
    }

    /// Minimizes `||A x - b||_2`. Assumes `A` has full column rank.
    pub fn solve(&self, b: &[Complex<T>]) -> LsSolution<T> {
        assert_eq!(b.len(), self.rows);
        let mut qb = b.to_vec();
        self.apply_qh(&mut qb);
        let n = self.cols;
        let mut x = vec![Complex::zero(); n];
        for i in (0..n).rev() {
            let mut acc = qb[i];
            for j in i + 1..n {
                acc -= self.r[(i, j)] * x[j];
            }
            x[i] = acc / self.r[(i, i)];
        }
        let residual_norm = norm2(&qb[n..]);
        LsSolution { x, residual_norm }
    }
}

/// Singular values in descending order via one-sided Jacobi rotations.
pub fn singular_values<T: Real>(a: &CMatrix<T>) -> Vec<T> {
    // Work on the orientation with fewer columns.
    let mut w = if a.cols() <= a.rows() { a.clone() } else { a.adjoint() };
    let n = w.cols();
    let tol = T::epsilon() * T::of_usize(w.rows().max(1));
    for _sweep in 0..60 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = norm2(w.col(p)).powi(2);
                let beta = norm2(w.col(q)).powi(2);
                let gamma = dotc(w.col(p), w.col(q));
                let g = gamma.norm();
                if g.is_zero() || g <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                // Unit phase that makes the off-diagonal entry real.
                let phase = gamma / g;
                let zeta = (beta - alpha) / (g + g);
                let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let t = if zeta.is_zero() { T::one() } else { t };
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                for r in 0..w.rows() {
                    let wp = w[(r, p)];
                    let wq = w[(r, q)];
                    w[(r, p)] = wp.scale(c) - wq * phase.conj().scale(s);
                    w[(r, q)] = wp * phase.scale(s) + wq.scale(c);
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sv: Vec<T> = (0..n).map(|c| norm2(w.col(c))).collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    sv
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex<f64> {
        Complex::new(re, im)
    }

    fn pseudo_random(rows: usize, cols: usize, seed: u64) -> CMatrix<f64> {
        let mut s = seed;
        let mut next = move || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        CMatrix::from_fn(rows, cols, |_, _| c(next(), next()))
    }

    #[test]
    fn qr_solves_consistent_system() {
        let a = pseudo_random(9, 4, 7);
        let x_true = vec![c(1.0, 2.0), c(-0.5, 0.0), c(0.0, 3.0), c(2.0, -1.0)];
        let b = a.mul_vec(&x_true);
        let qr = QrFactor::new(&a);
        let sol = qr.solve(&b);
        for (x, t) in sol.x.iter().zip(&x_true) {
            assert!((x - t).norm() < 1e-12);
        }
        assert!(sol.residual_norm < 1e-12);
    }

    #[test]
    fn qr_residual_orthogonal_to_columns() {
        let a = pseudo_random(12, 3, 11);
        let b: Vec<_> = (0..12).map(|k| c(k as f64, 1.0 - k as f64 * 0.3)).collect();
        let sol = QrFactor::new(&a).solve(&b);
        let ax = a.mul_vec(&sol.x);
        let resid: Vec<_> = b.iter().zip(&ax).map(|(p, q)| p - q).collect();
        for k in 0..3 {
            assert!(dotc(a.col(k), &resid).norm() < 1e-10);
        }
        assert!((norm2(&resid) - sol.residual_norm).abs() < 1e-10);
    }

    #[test]
    fn qr_flags_dependent_columns() {
        let a = pseudo_random(6, 2, 3);
        let dup = a.with_column(a.col(0));
        let qr = QrFactor::new(&dup);
        assert!(qr.diagonal_ratio() < 1e-12);
    }

    #[test]
    fn singular_values_of_diagonal() {
        let mut a = CMatrix::<f64>::zeros(4, 3);
        a[(0, 0)] = c(3.0, 0.0);
        a[(1, 1)] = c(0.0, -5.0);
        a[(2, 2)] = c(1.0, 1.0);
        let sv = singular_values(&a);
        assert!((sv[0] - 5.0).abs() < 1e-14);
        assert!((sv[1] - 3.0).abs() < 1e-14);
        assert!((sv[2] - 2f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn singular_values_match_gram_trace() {
        let a = pseudo_random(7, 5, 99);
        let sv = singular_values(&a);
        let sum_sq: f64 = sv.iter().map(|s| s * s).sum();
        assert!((sum_sq - a.frobenius_norm().powi(2)).abs() < 1e-12);
        // wide orientation gives the same spectrum
        let sv_t = singular_values(&a.adjoint());
        for (p, q) in sv.iter().zip(&sv_t) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn f32_qr_works() {
        let a = CMatrix::<f32>::from_fn(3, 2, |r, c| Complex::new((r + 2 * c) as f32, 1.0));
        let x = vec![Complex::new(1.0f32, 0.0), Complex::new(0.0, 1.0)];
        let sol = QrFactor::new(&a).solve(&a.mul_vec(&x));
        assert!((sol.x[0] - x[0]).norm() < 1e-4);
    }
}
