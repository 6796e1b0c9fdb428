//! Sequential linear combinations with independent increments.
//!
//! Given statistics `X_1, ..., X_K` with covariance `V` and any direction
//! `b`, the combination `Y_j = b_j^T V_j^- X_j` (where `b_j` and `X_j` keep
//! only the first `j` entries and `V_j^-` is the padded inverse of the
//! leading block) satisfies `cov(Y_j, Y_k) = var(Y_j)` for `j <= k`.
//! Conversely every nontrivial sequence of combinations with that property
//! arises this way for some `b`, which [`recover_b`] reconstructs.

use crate::error::{Error, Result};
use crate::matrix::{chol_decompose, dot, padded_geninverse, SymMatrix};
use serde::{Deserialize, Serialize};

/// Relative threshold below which a combined variance is treated as zero.
pub const DEGENERATE_VARIANCE: f64 = 1e-14;

/// Default tolerance for exact algebraic increment checks.
pub const ALGEBRAIC_TOLERANCE: f64 = 1e-8;

/// Default tolerance for Monte Carlo standardized covariance matrices.
pub const EMPIRICAL_TOLERANCE: f64 = 0.02;

/// Observed statistics through look `j` together with a covariance matrix
/// whose leading `j x j` block is known.
#[derive(Debug, Clone, PartialEq)]
pub struct StatPath {
    values: Vec<f64>,
    cov: SymMatrix,
}

impl StatPath {
    pub fn new(values: Vec<f64>, cov: SymMatrix) -> Result<Self> {
        if values.is_empty() || values.len() > cov.dim() {
            return Err(Error::DimensionMismatch {
                expected: cov.dim(),
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InsufficientData("statistic values must be finite".into()));
        }
        Ok(Self { values, cov })
    }

    pub fn looks(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn cov(&self) -> &SymMatrix {
        &self.cov
    }
}

/// The direction `b` (or an estimated mean vector) selecting the targeted
/// alternative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DirectionVector(Vec<f64>);

impl DirectionVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn ones(len: usize) -> Self {
        Self(vec![1.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    /// All-zero (or empty) directions cannot define a test.
    pub fn is_degenerate(&self) -> bool {
        self.0.iter().all(|v| *v == 0.0)
    }

    pub fn truncated(&self, looks: usize) -> Self {
        Self(self.0[..looks].to_vec())
    }
}

/// A combined statistic and its standardized form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CombinedStat {
    pub y: f64,
    pub variance: f64,
    pub z: f64,
}

/// `y = b^T V_j^- X`, `variance = b^T V_j^- b`, `z = y / sqrt(variance)`.
pub fn combine(path: &StatPath, dir: &DirectionVector) -> Result<CombinedStat> {
    let j = path.looks();
    if dir.len() != j {
        return Err(Error::DimensionMismatch {
            expected: j,
            got: dir.len(),
        });
    }
    let block = path.cov.leading_block(j);
    let chol = chol_decompose(&block)?;

    // Work with b scaled to unit max-norm so the degeneracy test does not
    // depend on the overall scale of the direction.
    let scale = dir.values().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::DegenerateDirection { variance: 0.0 });
    }
    let b: Vec<f64> = dir.values().iter().map(|v| v / scale).collect();
    let w = chol.solve(&b)?;
    let unit_variance = dot(&w, &b);
    let max_diag = block.diagonal().into_iter().fold(0.0_f64, f64::max);
    if !(unit_variance * max_diag > DEGENERATE_VARIANCE) {
        return Err(Error::DegenerateDirection {
            variance: unit_variance * scale * scale,
        });
    }
    let unit_y = dot(&w, path.values());
    Ok(CombinedStat {
        y: unit_y * scale,
        variance: unit_variance * scale * scale,
        z: unit_y / unit_variance.sqrt(),
    })
}

/// Coefficient vector `a_j = V_j^- b_j`, padded with zeros to `V.dim()`.
pub fn coefficients(v: &SymMatrix, b: &[f64], look: usize) -> Result<Vec<f64>> {
    if b.len() != v.dim() {
        return Err(Error::DimensionMismatch {
            expected: v.dim(),
            got: b.len(),
        });
    }
    let pinv = padded_geninverse(v, look)?;
    let mut truncated = b.to_vec();
    truncated[look..].iter_mut().for_each(|x| *x = 0.0);
    pinv.apply(&truncated)
}

/// Result of transforming a full path of statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformedPath {
    /// Rows `a_1, ..., a_K`.
    pub coefficients: Vec<Vec<f64>>,
    /// `Y_j = a_j^T X`.
    pub y: Vec<f64>,
    /// Covariance of `Y`, `a_j^T V a_k`.
    pub cov: SymMatrix,
}

impl TransformedPath {
    pub fn variances(&self) -> Vec<f64> {
        self.cov.diagonal()
    }
}

/// Applies the full sequence of combinations to `x`.
pub fn transform_path(v: &SymMatrix, b: &[f64], x: &[f64]) -> Result<TransformedPath> {
    let k = v.dim();
    if x.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: x.len(),
        });
    }
    chol_decompose(v)?;
    let coefficients = (1..=k)
        .map(|j| coefficients(v, b, j))
        .collect::<Result<Vec<_>>>()?;
    let y = coefficients.iter().map(|a| dot(a, x)).collect();
    let va: Vec<Vec<f64>> = coefficients
        .iter()
        .map(|a| v.mul_vec(a))
        .collect::<Result<_>>()?;
    let cov = SymMatrix::from_fn(k, |i, j| dot(&coefficients[i], &va[j]));
    Ok(TransformedPath {
        coefficients,
        y,
        cov,
    })
}

/// Which diagonal entry the off-diagonal covariances should equal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IncrementKind {
    /// `V(j,k) = V(j,j)` for `j <= k` (score-type statistics).
    Statistic,
    /// `V(j,k) = V(k,k)` for `j <= k` (sequential estimators).
    Estimator,
}

/// Largest deviation from the independent increments structure over `j < k`.
pub fn check_independent_increments(v: &SymMatrix, kind: IncrementKind) -> f64 {
    let k = v.dim();
    let mut worst = 0.0_f64;
    for j in 0..k {
        for l in (j + 1)..k {
            let reference = match kind {
                IncrementKind::Statistic => v.get(j, j),
                IncrementKind::Estimator => v.get(l, l),
            };
            worst = worst.max((v.get(j, l) - reference).abs());
        }
    }
    worst
}

/// Recovers the direction `b` that generates the given coefficient rows,
/// using `b_j = (V_j a_j)_j`.
pub fn recover_b(coefficients: &[Vec<f64>], v: &SymMatrix) -> Result<Vec<f64>> {
    let k = v.dim();
    if coefficients.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: coefficients.len(),
        });
    }
    coefficients
        .iter()
        .enumerate()
        .map(|(j, a)| {
            if a.len() != k {
                return Err(Error::DimensionMismatch {
                    expected: k,
                    got: a.len(),
                });
            }
            if a[j] == 0.0 {
                return Err(Error::TrivialCombination { look: j + 1 });
            }
            Ok((0..=j).map(|l| v.get(j, l) * a[l]).sum())
        })
        .collect()
}
