//! Array manifold for the active antennas, its self-conjugate Khatri-Rao
//! product and the angular grids it is evaluated on.

use num_complex::Complex;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{rational_to_f64, Rational};
use crate::linalg::{singular_values, CMatrix};
use crate::scalar::{cis, Real};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("spacing must lie in (0, 0.5] wavelengths, got {0}")]
    Spacing(String),
    #[error("active marks must be sorted, distinct and below {n_underlying}")]
    Marks { n_underlying: usize },
    #[error("at least one active antenna is required")]
    NoAntennas,
    #[error("grid angles must be strictly increasing within (-pi/2, pi/2]")]
    Grid,
    #[error("grid must contain at least one angle")]
    EmptyGrid,
}

/// Underlying ULA plus the subset of antennas that are switched on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub n_underlying: usize,
    #[serde(with = "rational_str")]
    pub spacing: Rational,
    pub active_marks: Vec<usize>,
}

mod rational_str {
    use super::Rational;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(r: &Rational, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&r.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Rational, D::Error> {
        let t = String::deserialize(d)?;
        t.parse().map_err(serde::de::Error::custom)
    }
}

impl ArrayGeometry {
    pub fn new(n_underlying: usize, spacing: Rational, active_marks: Vec<usize>) -> Result<Self, ModelError> {
        if spacing <= Rational::zero() || spacing > Rational::new(1, 2) {
            return Err(ModelError::Spacing(spacing.to_string()));
        }
        if active_marks.is_empty() {
            return Err(ModelError::NoAntennas);
        }
        let ordered = active_marks.windows(2).all(|w| w[0] < w[1]);
        if !ordered || active_marks.iter().any(|&m| m >= n_underlying) {
            return Err(ModelError::Marks { n_underlying });
        }
        Ok(Self {
            n_underlying,
            spacing,
            active_marks,
        })
    }

    /// Every antenna of the ULA switched on.
    pub fn full(n_underlying: usize, spacing: Rational) -> Result<Self, ModelError> {
        Self::new(n_underlying, spacing, (0..n_underlying).collect())
    }

    pub fn m_active(&self) -> usize {
        self.active_marks.len()
    }

    /// Active antenna positions in wavelengths.
    pub fn active_positions<T: Real>(&self) -> Vec<T> {
        let d = rational_to_f64(self.spacing);
        self.active_marks.iter().map(|&m| T::of(m as f64 * d)).collect()
    }

    /// Positions of every antenna of the underlying ULA.
    pub fn ula_positions<T: Real>(&self) -> Vec<T> {
        let d = rational_to_f64(self.spacing);
        (0..self.n_underlying).map(|m| T::of(m as f64 * d)).collect()
    }

    pub fn spatial_compression_rate(&self) -> f64 {
        self.m_active() as f64 / self.n_underlying as f64
    }
}

/// Investigated angles (radians), strictly increasing in `(-pi/2, pi/2]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngularGrid<T> {
    angles: Vec<T>,
}

impl<T: Real> AngularGrid<T> {
    pub fn new(angles: Vec<T>) -> Result<Self, ModelError> {
        if angles.is_empty() {
            return Err(ModelError::EmptyGrid);
        }
        let half_pi = T::FRAC_PI_2();
        let ordered = angles.windows(2).all(|w| w[0] < w[1]);
        // asin(-1) lands exactly on -pi/2; the grid formula can produce it for
        // even Q, so accept it at the lower edge.
        let in_range = angles.iter().all(|&a| a >= -half_pi && a <= half_pi);
        if !ordered || !in_range {
            return Err(ModelError::Grid);
        }
        Ok(Self { angles })
    }

    pub fn from_degrees(degrees: &[f64]) -> Result<Self, ModelError> {
        Self::new(degrees.iter().map(|d| T::of(d.to_radians())).collect())
    }

    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }

    pub fn angles(&self) -> &[T] {
        &self.angles
    }

    pub fn degrees(&self) -> Vec<f64> {
        self.angles.iter().map(|a| a.to_f64_lossy().to_degrees()).collect()
    }

    /// Fractional grid index of an angle on an inverse-sine grid of this
    /// size (`q` such that `sin(theta) = 2 (q - ceil((Q-1)/2)) / Q`).
    pub fn inverse_sin_index(&self, theta: f64) -> f64 {
        let q = self.len();
        let center = q.saturating_sub(1).div_ceil(2) as f64;
        center + theta.sin() * q as f64 / 2.0
    }

    /// Fractional position of `theta` on this grid, interpolated linearly in
    /// `sin(theta)` between neighbours and extrapolated past the ends.
    /// Agrees with [`Self::inverse_sin_index`] on inverse-sine grids.
    pub fn fractional_index(&self, theta: f64) -> f64 {
        let s: Vec<f64> = self.angles.iter().map(|a| a.to_f64_lossy().sin()).collect();
        let x = theta.sin();
        if s.len() < 2 {
            return 0.0;
        }
        let k = s.partition_point(|&v| v <= x).clamp(1, s.len() - 1) - 1;
        k as f64 + (x - s[k]) / (s[k + 1] - s[k])
    }
}

/// Inverse-sine grid: `theta_q = asin((2/Q)(q - 1 - ceil((Q-1)/2)))`, q = 1..Q.
pub fn inverse_sin_grid<T: Real>(q: usize) -> Result<AngularGrid<T>, ModelError> {
    if q == 0 {
        return Err(ModelError::EmptyGrid);
    }
    let center = (q - 1).div_ceil(2) as i64;
    let angles = (0..q as i64)
        .map(|k| {
            let s = T::of(2.0 * (k - center) as f64 / q as f64);
            s.asin()
        })
        .collect();
    AngularGrid::new(angles)
}

/// `exp(j 2 pi sin(theta) p_k)` for every position `p_k` (wavelengths).
pub fn steering_vector<T: Real>(theta: T, positions: &[T]) -> Vec<Complex<T>> {
    let k = T::TAU() * theta.sin();
    positions.iter().map(|&p| cis(k * p)).collect()
}

/// `B` (active-antenna manifold), `B* ⊙ B`, and `vec(I)`.
#[derive(Debug, Clone)]
pub struct ManifoldMatrices<T> {
    pub b: CMatrix<T>,
    /// Row `i + j M` of column `q` is `conj(b_j(theta_q)) b_i(theta_q)`.
    pub kr: CMatrix<T>,
    pub noise_column: Vec<Complex<T>>,
}

pub fn manifold_and_kr<T: Real>(geometry: &ArrayGeometry, grid: &AngularGrid<T>) -> ManifoldMatrices<T> {
    let positions = geometry.active_positions::<T>();
    let m = positions.len();
    let q = grid.len();
    let mut b = CMatrix::zeros(m, q);
    for (c, &theta) in grid.angles().iter().enumerate() {
        b.col_mut(c).copy_from_slice(&steering_vector(theta, &positions));
    }
    let mut kr = CMatrix::zeros(m * m, q);
    for c in 0..q {
        let col = b.col(c).to_vec();
        let out = kr.col_mut(c);
        for j in 0..m {
            let bj = col[j].conj();
            for i in 0..m {
                out[i + j * m] = bj * col[i];
            }
        }
    }
    ManifoldMatrices {
        b,
        kr,
        noise_column: vec_identity(m),
    }
}

/// `vec(I_m)`, column-major.
pub fn vec_identity<T: Real>(m: usize) -> Vec<Complex<T>> {
    let mut v = vec![Complex::zero(); m * m];
    for i in 0..m {
        v[i + i * m] = Complex::one();
    }
    v
}

/// Numerical rank and 2-norm condition number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub rows: usize,
    pub cols: usize,
    pub rank: usize,
    pub condition_number: f64,
    pub full_column_rank: bool,
    pub tolerance: f64,
}

/// Singular values below `s_max * max(rows, cols) * eps * 64` count as zero.
pub fn rank_report<T: Real>(kr: &CMatrix<T>, noise_column: Option<&[Complex<T>]>) -> RankReport {
    let augmented;
    let matrix = match noise_column {
        Some(col) => {
            augmented = kr.with_column(col);
            &augmented
        }
        None => kr,
    };
    let sv = singular_values(matrix);
    let smax = sv.first().copied().unwrap_or_else(T::zero);
    let tol = smax * T::of_usize(matrix.rows().max(matrix.cols())) * T::epsilon() * T::of(64.0);
    let rank = sv.iter().filter(|&&s| s > tol).count();
    let smin = sv.last().copied().unwrap_or_else(T::zero);
    let condition_number = if smin.is_zero() || matrix.cols() > matrix.rows() {
        f64::INFINITY
    } else {
        (smax / smin).to_f64_lossy()
    };
    RankReport {
        rows: matrix.rows(),
        cols: matrix.cols(),
        rank,
        condition_number,
        full_column_rank: rank == matrix.cols(),
        tolerance: tol.to_f64_lossy(),
    }
}

/// Rows of `B* ⊙ B` whose differences form the arithmetic run
/// `start, start + d, ...` of `len` terms; one row per difference, the first
/// pair found in row order.
pub fn run_rows(geometry: &ArrayGeometry, start: Rational, len: usize) -> Option<Vec<usize>> {
    let m = geometry.m_active();
    let d = geometry.spacing;
    (0..len as i64)
        .map(|k| {
            let target = start + d * Rational::from_integer(k);
            (0..m * m).find(|&row| {
                let (i, j) = (row % m, row / m);
                let diff = Rational::from_integer(geometry.active_marks[i] as i64 - geometry.active_marks[j] as i64) * d;
                diff == target
            })
        })
        .collect()
}
