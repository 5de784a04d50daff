//! Dense symmetric-matrix algebra: construction, norms, traces, products and
//! symmetric eigendecomposition. Everything downstream goes through this module.

use ndarray::prelude::*;
use ndarray_linalg::{Eigh, EigValsh, UPLO};

use crate::error::{Error, Result};

/// Relative tolerance for accepting a raw matrix as symmetric.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Relative tolerance for eigendecomposition reconstruction and orthonormality.
pub const EIGH_TOL: f64 = 1e-9;

/// Dense real symmetric p x p matrix.
///
/// Entries are stored exactly symmetrized; instances are immutable after
/// construction and safe to share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricOperator {
    data: Array2<f64>,
}

impl SymmetricOperator {
    /// Builds an operator from raw entries, validating symmetry.
    ///
    /// The input must be square and satisfy
    /// `|a_ij - a_ji| <= SYMMETRY_TOL * max(1, max|a|)`; the stored entries are
    /// `(a + a^T) / 2`.
    pub fn make_symmetric(raw: Array2<f64>) -> Result<Self> {
        let (rows, cols) = raw.dim();
        if rows != cols {
            return Err(Error::NonSquare { rows, cols });
        }
        let scale = raw.iter().fold(0.0_f64, |m, x| m.max(x.abs())).max(1.0);
        let tol = SYMMETRY_TOL * scale;
        for i in 0..rows {
            for j in (i + 1)..rows {
                let delta = (raw[[i, j]] - raw[[j, i]]).abs();
                if delta > tol {
                    return Err(Error::AsymmetricInput { i, j, delta, tol });
                }
            }
        }
        Ok(Self::symmetrized(raw))
    }

    /// Builds an operator by averaging a matrix with its transpose, without a
    /// symmetry check. Intended for internally computed quantities whose
    /// asymmetry is pure roundoff.
    pub fn symmetrized(raw: Array2<f64>) -> Self {
        let (rows, cols) = raw.dim();
        assert_eq!(rows, cols, "symmetrized() requires a square matrix");
        let mut data = raw;
        for i in 0..rows {
            for j in (i + 1)..rows {
                let v = 0.5 * (data[[i, j]] + data[[j, i]]);
                data[[i, j]] = v;
                data[[j, i]] = v;
            }
        }
        Self { data }
    }

    /// Zero operator of dimension `p`.
    pub fn zeros(p: usize) -> Self {
        Self {
            data: Array2::zeros((p, p)),
        }
    }

    /// Identity of dimension `p`.
    pub fn identity(p: usize) -> Self {
        Self {
            data: Array2::eye(p),
        }
    }

    /// Diagonal operator from the given entries.
    pub fn from_diag(diag: &[f64]) -> Self {
        Self {
            data: Array2::from_diag(&Array1::from(diag.to_vec())),
        }
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_array(self) -> Array2<f64> {
        self.data
    }

    /// Operator norm: largest absolute eigenvalue.
    pub fn op_norm(&self) -> f64 {
        match self.data.eigvalsh(UPLO::Lower) {
            Ok(vals) => vals.iter().fold(0.0_f64, |m, v| m.max(v.abs())),
            // eigvalsh failures on finite symmetric input are practically
            // unreachable; fall back to the HS norm upper bound.
            Err(_) => self.hs_norm(),
        }
    }

    /// Hilbert--Schmidt (Frobenius) norm.
    pub fn hs_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn trace(&self) -> f64 {
        self.data.diag().sum()
    }

    /// Hilbert--Schmidt inner product `sum_ij A_ij B_ij`.
    pub fn hs_inner(&self, other: &Self) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                left: self.dim(),
                right: other.dim(),
            });
        }
        Ok(self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| a * b)
            .sum())
    }

    /// Matrix-vector product.
    pub fn apply(&self, v: &Array1<f64>) -> Array1<f64> {
        self.data.dot(v)
    }

    /// `self + other`.
    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                left: self.dim(),
                right: other.dim(),
            });
        }
        Ok(Self {
            data: &self.data + &other.data,
        })
    }

    /// `self - other`.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                left: self.dim(),
                right: other.dim(),
            });
        }
        Ok(Self {
            data: &self.data - &other.data,
        })
    }

    /// `c * self`.
    pub fn scale(&self, c: f64) -> Self {
        Self {
            data: &self.data * c,
        }
    }

    /// Symmetric sandwich product `self * mid * self`, symmetrized against
    /// roundoff.
    pub fn sandwich(&self, mid: &Self) -> Result<Self> {
        if self.dim() != mid.dim() {
            return Err(Error::DimensionMismatch {
                left: self.dim(),
                right: mid.dim(),
            });
        }
        let prod = self.data.dot(&mid.data).dot(&self.data);
        Ok(Self::symmetrized(prod))
    }

    /// Plain matrix product; the result is generally not symmetric.
    pub fn matmul(&self, other: &Self) -> Result<Array2<f64>> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                left: self.dim(),
                right: other.dim(),
            });
        }
        Ok(self.data.dot(&other.data))
    }

    /// Max-absolute-entry norm, used for entrywise tolerance checks.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    /// Eigenvalues only, sorted non-increasing.
    pub fn eigenvalues(&self) -> Result<Array1<f64>> {
        let vals = self
            .data
            .eigvalsh(UPLO::Lower)
            .map_err(|e| Error::ConvergenceFailure(e.to_string()))?;
        let mut v: Vec<f64> = vals.to_vec();
        v.reverse();
        Ok(Array1::from(v))
    }
}

/// Symmetric eigendecomposition with eigenvalues sorted non-increasing.
///
/// Column `j` of `eigenvectors` pairs with `eigenvalues[j]`. Each eigenvector
/// has its first component of non-negligible magnitude made positive so that
/// output is reproducible (projectors are unaffected by the sign choice).
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub eigenvalues: Array1<f64>,
    pub eigenvectors: Array2<f64>,
}

impl EigenDecomposition {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Orthogonal projector onto the span of eigenvector columns `range`.
    pub fn projector(&self, range: std::ops::Range<usize>) -> SymmetricOperator {
        let p = self.dim();
        let mut acc = Array2::<f64>::zeros((p, p));
        for j in range {
            let v = self.eigenvectors.column(j);
            for a in 0..p {
                let va = v[a];
                if va == 0.0 {
                    continue;
                }
                for b in a..p {
                    acc[[a, b]] += va * v[b];
                }
            }
        }
        for a in 0..p {
            for b in (a + 1)..p {
                acc[[b, a]] = acc[[a, b]];
            }
        }
        SymmetricOperator { data: acc }
    }
}

/// Symmetric eigendecomposition of `a`, eigenvalues sorted non-increasing.
pub fn eigh(a: &SymmetricOperator) -> Result<EigenDecomposition> {
    let (vals, vecs) = a
        .data
        .eigh(UPLO::Lower)
        .map_err(|e| Error::ConvergenceFailure(e.to_string()))?;
    let p = vals.len();
    // LAPACK returns ascending order; flip to non-increasing.
    let mut eigenvalues = Array1::zeros(p);
    let mut eigenvectors = Array2::zeros((p, p));
    for j in 0..p {
        let src = p - 1 - j;
        eigenvalues[j] = vals[src];
        let col = vecs.column(src);
        // Sign convention: first component with non-negligible magnitude
        // is made positive.
        let maxmag = col.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        let lead = col.iter().find(|x| x.abs() > 1e-12 * maxmag.max(1e-300));
        let flip = matches!(lead, Some(&x) if x < 0.0);
        for i in 0..p {
            eigenvectors[[i, j]] = if flip { -col[i] } else { col[i] };
        }
    }
    Ok(EigenDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

/// Convenience free functions mirroring the operator methods.
pub fn op_norm(a: &SymmetricOperator) -> f64 {
    a.op_norm()
}

pub fn hs_norm(a: &SymmetricOperator) -> f64 {
    a.hs_norm()
}

pub fn trace(a: &SymmetricOperator) -> f64 {
    a.trace()
}

pub fn hs_inner(a: &SymmetricOperator, b: &SymmetricOperator) -> Result<f64> {
    a.hs_inner(b)
}
