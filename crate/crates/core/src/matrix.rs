//! Dense symmetric linear algebra for the small covariance matrices that
//! arise from sequential monitoring (K is at most about ten).

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Pivots at or below this fraction of the largest diagonal entry are
/// treated as a loss of positive definiteness.
pub const PIVOT_TOLERANCE: f64 = 1e-12;

const SYMMETRY_TOLERANCE: f64 = 1e-12;

/// A symmetric `dim x dim` matrix stored densely in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "matrix dimension must be at least 1");
        Self {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from `f(i, j)` evaluated on the upper triangle.
    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in i..dim {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    /// Builds a matrix from rows, rejecting ragged or asymmetric input.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        if dim == 0 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                got: 0,
            });
        }
        let mut data = Vec::with_capacity(dim * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        let scale = data.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1e-300);
        for i in 0..dim {
            for j in (i + 1)..dim {
                let (a, b) = (data[i * dim + j], data[j * dim + i]);
                if (a - b).abs() > SYMMETRY_TOLERANCE * scale {
                    return Err(Error::NotSymmetric { row: i, col: j });
                }
                let avg = 0.5 * (a + b);
                data[i * dim + j] = avg;
                data[j * dim + i] = avg;
            }
        }
        Ok(Self { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    /// Sets entry `(i, j)` and its mirror.
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.dim + j] = value;
        self.data[j * self.dim + i] = value;
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.dim).map(<[f64]>::to_vec).collect()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    /// Upper-left `size x size` block.
    pub fn leading_block(&self, size: usize) -> SymMatrix {
        assert!(size >= 1 && size <= self.dim);
        SymMatrix::from_fn(size, |i, j| self.get(i, j))
    }

    pub fn mul_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_len(v.len())?;
        Ok(self
            .data
            .chunks(self.dim)
            .map(|row| dot(row, v))
            .collect())
    }

    /// Converts a covariance matrix to the matching correlation matrix.
    pub fn to_correlation(&self) -> Result<SymMatrix> {
        let sd: Vec<f64> = self.diagonal().iter().map(|v| v.sqrt()).collect();
        if let Some(index) = sd.iter().position(|s| !(*s > 0.0)) {
            return Err(Error::NotPositiveDefinite {
                index,
                pivot: self.get(index, index),
            });
        }
        Ok(SymMatrix::from_fn(self.dim, |i, j| {
            if i == j {
                1.0
            } else {
                self.get(i, j) / (sd[i] * sd[j])
            }
        }))
    }

    pub fn scaled(&self, factor: f64) -> SymMatrix {
        SymMatrix {
            dim: self.dim,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len == self.dim {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.dim,
                got: len,
            })
        }
    }
}

impl TryFrom<Vec<Vec<f64>>> for SymMatrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        SymMatrix::from_rows(&rows)
    }
}

impl From<SymMatrix> for Vec<Vec<f64>> {
    fn from(m: SymMatrix) -> Self {
        m.rows()
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Lower-triangular Cholesky factor `L` with `L L^T = M`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cholesky {
    dim: usize,
    lower: Vec<f64>,
}

impl Cholesky {
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.lower[i * self.dim + j]
    }

    /// Rows of the factor, zeros above the diagonal.
    pub fn lower_rows(&self) -> Vec<Vec<f64>> {
        self.lower.chunks(self.dim).map(<[f64]>::to_vec).collect()
    }

    /// Solves `M x = b`.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: b.len(),
            });
        }
        let n = self.dim;
        let mut y = b.to_vec();
        for i in 0..n {
            let s = y[i] - dot(&self.lower[i * n..i * n + i], &y[..i]);
            y[i] = s / self.get(i, i);
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= self.get(k, i) * y[k];
            }
            y[i] = s / self.get(i, i);
        }
        Ok(y)
    }

    pub fn inverse(&self) -> SymMatrix {
        let n = self.dim;
        let mut inv = SymMatrix::zeros(n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            let col = self.solve(&e).expect("dimension checked");
            for i in j..n {
                inv.set(i, j, col[i]);
            }
        }
        inv
    }
}

/// Cholesky factorization; fails when a pivot falls to
/// `PIVOT_TOLERANCE` times the largest diagonal entry or below.
pub fn chol_decompose(m: &SymMatrix) -> Result<Cholesky> {
    let n = m.dim();
    let max_diag = m.diagonal().into_iter().fold(0.0_f64, f64::max);
    if !(max_diag > 0.0) {
        return Err(Error::NotPositiveDefinite {
            index: 0,
            pivot: max_diag,
        });
    }
    let threshold = PIVOT_TOLERANCE * max_diag;
    let mut lower = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let s = m.get(i, j) - dot(&lower[i * n..i * n + j], &lower[j * n..j * n + j]);
            if i == j {
                if !(s > threshold) {
                    return Err(Error::NotPositiveDefinite { index: i, pivot: s });
                }
                lower[i * n + i] = s.sqrt();
            } else {
                lower[i * n + j] = s / lower[j * n + j];
            }
        }
    }
    Ok(Cholesky { dim: n, lower })
}

/// Inverse of the leading `active x active` block embedded in a `dim x dim`
/// zero matrix: the Moore-Penrose inverse of the matrix that keeps only that
/// block.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedInverse {
    active: usize,
    matrix: SymMatrix,
}

impl PaddedInverse {
    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn active(&self) -> usize {
        self.active
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix.get(i, j)
    }

    pub fn as_matrix(&self) -> &SymMatrix {
        &self.matrix
    }

    /// `V_j^- v` for a full-length vector; entries past `active` are ignored.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.matrix.mul_vec(v)
    }

    /// `u^T V_j^- v`.
    pub fn bilinear(&self, u: &[f64], v: &[f64]) -> Result<f64> {
        let w = self.apply(v)?;
        self.matrix.check_len(u.len())?;
        Ok(dot(u, &w))
    }
}

/// Padded generalized inverse for look `active` (1-based count of leading
/// rows kept).
pub fn padded_geninverse(v: &SymMatrix, active: usize) -> Result<PaddedInverse> {
    if active == 0 || active > v.dim() {
        return Err(Error::LookOutOfRange {
            look: active,
            max: v.dim(),
        });
    }
    let block_inv = chol_decompose(&v.leading_block(active))?.inverse();
    let mut matrix = SymMatrix::zeros(v.dim());
    for i in 0..active {
        for j in i..active {
            matrix.set(i, j, block_inv.get(i, j));
        }
    }
    Ok(PaddedInverse { active, matrix })
}

/// `v^T M v`.
pub fn quad_form(v: &[f64], m: &SymMatrix) -> Result<f64> {
    let mv = m.mul_vec(v)?;
    Ok(dot(v, &mv))
}
