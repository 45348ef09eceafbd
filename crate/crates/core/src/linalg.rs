//! Small dense linear-algebra helpers.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative eigenvalue cutoff of the Moore-Penrose pseudoinverse.
pub const PINV_RTOL: f64 = 1e-12;

/// Root `F` of the pseudoinverse of a symmetric positive semidefinite matrix,
/// so that `M^+ = F'F`.
///
/// Rows of `F` are `l^-1/2 v'` over eigenpairs with `l > rtol * max l`.
pub fn symmetric_pinv_factor(m: &DMatrix<f64>, rtol: f64) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::Dimension(format!(
            "pseudoinverse of a non-square {}x{} matrix",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite entry in system matrix".into()));
    }
    let eig = SymmetricEigen::new(m.clone());
    let top = eig.eigenvalues.max();
    if !(top > 0.0) {
        return Err(Error::Numerical("system matrix has no positive eigenvalue".into()));
    }
    let kept: Vec<usize> = (0..m.nrows()).filter(|&i| eig.eigenvalues[i] > rtol * top).collect();
    Ok(DMatrix::from_fn(kept.len(), m.ncols(), |r, c| {
        let i = kept[r];
        eig.eigenvectors[(c, i)] / eig.eigenvalues[i].sqrt()
    }))
}

/// Thin SVD of a penalized least-squares matrix
///
/// ```text
/// A = [ top       ]
///     [ 0    L'   ]     penalty = L L'
/// ```
///
/// where the penalty acts on the trailing columns. Singular values at or
/// below `sqrt(PINV_RTOL)` times the largest are dropped, matching the
/// eigenvalue cutoff `PINV_RTOL` on `A'A`.
#[derive(Debug, Clone)]
pub struct PenalizedSvd {
    /// Rows of the kept left singular vectors that belong to `top`.
    pub u_top: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    /// Kept right singular vectors, one per row.
    pub v_t: DMatrix<f64>,
}

impl PenalizedSvd {
    pub fn new(top: &DMatrix<f64>, penalty: &DMatrix<f64>) -> Result<Self> {
        let (rows, dim, q) = (top.nrows(), top.ncols(), penalty.nrows());
        if !penalty.is_square() || q > dim {
            return Err(Error::Dimension(format!(
                "{q}x{} penalty for {dim} columns",
                penalty.ncols()
            )));
        }
        if top.iter().chain(penalty.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite entry in penalized system".into()));
        }
        let eig = SymmetricEigen::new((penalty + penalty.transpose()) * 0.5);
        let mut a = DMatrix::zeros(rows + q, dim);
        a.rows_mut(0, rows).copy_from(top);
        for i in 0..q {
            let root = eig.eigenvalues[i].max(0.0).sqrt();
            for h in 0..q {
                a[(rows + i, dim - q + h)] = root * eig.eigenvectors[(h, i)];
            }
        }
        let svd = a.svd(true, true);
        let (Some(u), Some(v_t)) = (&svd.u, &svd.v_t) else {
            return Err(Error::Numerical("singular value decomposition failed".into()));
        };
        let sv = &svd.singular_values;
        let top_sv = sv.max();
        if !(top_sv > 0.0 && top_sv.is_finite()) {
            return Err(Error::Numerical("penalized system is identically zero".into()));
        }
        let cutoff = PINV_RTOL.sqrt() * top_sv;
        let kept: Vec<usize> = (0..sv.len()).filter(|&i| sv[i] > cutoff).collect();
        Ok(PenalizedSvd {
            u_top: DMatrix::from_fn(rows, kept.len(), |r, c| u[(r, kept[c])]),
            singular_values: DVector::from_iterator(kept.len(), kept.iter().map(|&i| sv[i])),
            v_t: DMatrix::from_fn(kept.len(), dim, |r, c| v_t[(kept[r], c)]),
        })
    }

    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    /// `Sigma^+ V'`, a root of the pseudoinverse of `A'A`.
    pub fn pinv_factor(&self) -> DMatrix<f64> {
        let mut f = self.v_t.clone();
        for (mut row, s) in f.row_iter_mut().zip(self.singular_values.iter()) {
            row /= *s;
        }
        f
    }

    /// Least-squares solution of `A b = [rhs_top; 0]`.
    pub fn solve(&self, rhs_top: &DVector<f64>) -> DVector<f64> {
        let mut proj = self.u_top.tr_mul(rhs_top);
        proj.component_div_assign(&self.singular_values);
        self.v_t.tr_mul(&proj)
    }

    /// Trace of `top (A'A)^+ top'`.
    pub fn trace_top(&self) -> f64 {
        self.u_top.norm_squared()
    }
}

/// Dominant eigenvalue of a symmetric positive semidefinite matrix by power iteration.
///
/// Stops once successive Rayleigh quotients agree to `tol` relative; fails after
/// `max_iter` iterations without convergence.
pub fn power_iteration(a: &DMatrix<f64>, tol: f64, max_iter: usize) -> Result<f64> {
    let n = a.nrows();
    if n == 0 || !a.is_square() {
        return Err(Error::Dimension("power iteration needs a non-empty square matrix".into()));
    }
    // start away from any eigenvector that is orthogonal to all-ones
    let mut v = DVector::from_fn(n, |i, _| 1.0 + (i as f64 + 1.0).sqrt().fract());
    v.normalize_mut();
    let mut estimate = 0.0;
    for _ in 0..max_iter {
        let w = a * &v;
        let next = v.dot(&w);
        let norm = w.norm();
        if norm == 0.0 {
            return Ok(0.0);
        }
        v = w / norm;
        if (next - estimate).abs() <= tol * next.abs() {
            return Ok(next);
        }
        estimate = next;
    }
    Err(Error::Numerical(format!(
        "power iteration did not converge within {max_iter} iterations"
    )))
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}
