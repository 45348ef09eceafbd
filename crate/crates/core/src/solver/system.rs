//! The reduced penalized least-squares system.
//!
//! With `X~ = [K~, J~_theta]` and `W = diag(w)`, coefficients solve
//!
//! ```text
//! [ K~'WK~        K~'WJ~_theta                    ] [d]   [ K~'y~       ]
//! [ J~_theta'WK~  J~_theta'WJ~_theta + lambda n Q_theta ] [c] = [ J~_theta'y~ ]
//! ```
//!
//! through the Moore-Penrose pseudoinverse. Every quantity GCV needs follows
//! from weighted cross products that are formed once per design, so no
//! `n`-sized object is touched while smoothing parameters are searched.
//!
//! Forming the cross products squares the condition number of the basis,
//! and smooth kernels make that basis nearly collinear. The search tolerates
//! this, but the reported fit is solved in square-root form by
//! [`solve_system`], from the SVD of
//!
//! ```text
//! A = [ W^1/2 K~   W^1/2 J~_theta ]      b = [ W^-1/2 y~ ]
//!     [ 0          sqrt(lambda n) L' ]       [ 0         ]
//! ```
//!
//! with `Q_theta = L L'`, so that `A'A` is the system matrix and `A'b` its
//! right-hand side.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{symmetric_pinv_factor, PenalizedSvd, PINV_RTOL};
use crate::rounding::UniqueDesign;

/// Weighted cross products of the reduced basis with itself and with `y~`.
#[derive(Debug, Clone)]
pub struct CrossProducts {
    m: usize,
    q: usize,
    kwk: DMatrix<f64>,
    kwj: Vec<DMatrix<f64>>,
    // J_k' W J_l at index k * s + l
    jwj: Vec<DMatrix<f64>>,
    ky: DVector<f64>,
    jy: Vec<DVector<f64>>,
    gram: Vec<DMatrix<f64>>,
    y_sqnorm: f64,
    n: f64,
}

/// Check shapes and finiteness; returns `(m, q)`.
fn check_blocks(
    ud: &UniqueDesign,
    null: &DMatrix<f64>,
    contrast: &[DMatrix<f64>],
    gram: &[DMatrix<f64>],
) -> Result<(usize, usize)> {
    let u = ud.u();
    if null.nrows() != u || ud.weights.len() != u || ud.y_sums.len() != u {
        return Err(Error::Dimension(format!("null matrix has {} rows, design has {u}", null.nrows())));
    }
    if contrast.is_empty() || contrast.len() != gram.len() {
        return Err(Error::Dimension(format!(
            "{} contrast matrices but {} Gram matrices",
            contrast.len(),
            gram.len()
        )));
    }
    let q = contrast[0].ncols();
    for (k, (j, g)) in contrast.iter().zip(gram).enumerate() {
        if j.nrows() != u || j.ncols() != q || g.nrows() != q || g.ncols() != q {
            return Err(Error::Dimension(format!("term {k} matrices have inconsistent shapes")));
        }
    }
    let finite = |a: &DMatrix<f64>| a.iter().all(|v| v.is_finite());
    if !finite(null) || !contrast.iter().all(finite) || !gram.iter().all(finite) {
        return Err(Error::Numerical("non-finite basis matrix entry".into()));
    }
    Ok((null.ncols(), q))
}

fn check_smoothing(lambda: f64, theta: &[f64], s: usize) -> Result<()> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")));
    }
    if theta.len() != s || theta.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
        return Err(Error::InvalidArgument(format!(
            "theta must hold {s} positive values, got {theta:?}"
        )));
    }
    Ok(())
}

fn weighted_rows(m: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    let mut out = m.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        row *= w[i];
    }
    out
}

impl CrossProducts {
    pub fn new(
        ud: &UniqueDesign,
        null: &DMatrix<f64>,
        contrast: &[DMatrix<f64>],
        gram: &[DMatrix<f64>],
    ) -> Result<Self> {
        let (m, q) = check_blocks(ud, null, contrast, gram)?;
        let w: Vec<f64> = ud.weights.iter().map(|&w| w as f64).collect();
        let y = DVector::from_column_slice(&ud.y_sums);
        let wk = weighted_rows(null, &w);
        let wj: Vec<DMatrix<f64>> = contrast.iter().map(|j| weighted_rows(j, &w)).collect();

        let s = contrast.len();
        let mut jwj = vec![DMatrix::zeros(0, 0); s * s];
        for k in 0..s {
            for l in k..s {
                let block = contrast[k].tr_mul(&wj[l]);
                if l > k {
                    jwj[l * s + k] = block.transpose();
                }
                jwj[k * s + l] = block;
            }
        }
        Ok(CrossProducts {
            m,
            q,
            kwk: null.tr_mul(&wk),
            kwj: wj.iter().map(|wjk| null.tr_mul(wjk)).collect(),
            jwj,
            ky: null.tr_mul(&y),
            jy: contrast.iter().map(|j| j.tr_mul(&y)).collect(),
            gram: gram.to_vec(),
            y_sqnorm: ud.y_sqnorm,
            n: ud.n as f64,
        })
    }

    pub fn s(&self) -> usize {
        self.gram.len()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn n(&self) -> f64 {
        self.n
    }

    pub fn gram(&self) -> &[DMatrix<f64>] {
        &self.gram
    }

    fn jwj(&self, k: usize, l: usize) -> &DMatrix<f64> {
        &self.jwj[k * self.s() + l]
    }

    /// Solve the system at smoothing parameters `(lambda, theta)`.
    pub fn system(&self, lambda: f64, theta: &[f64]) -> Result<SmoothingSystem> {
        check_smoothing(lambda, theta, self.s())?;
        let (m, q) = (self.m, self.q);
        let dim = m + q;

        let mut gram_theta = DMatrix::zeros(q, q);
        let mut kwj_theta = DMatrix::zeros(m, q);
        let mut jy_theta = DVector::zeros(q);
        let mut jwj_theta = DMatrix::zeros(q, q);
        for (k, &tk) in theta.iter().enumerate() {
            gram_theta += &self.gram[k] * tk;
            kwj_theta += &self.kwj[k] * tk;
            jy_theta += &self.jy[k] * tk;
            for (l, &tl) in theta.iter().enumerate() {
                jwj_theta += self.jwj(k, l) * (tk * tl);
            }
        }

        // cross product without the penalty, X~'WX~
        let mut cross = DMatrix::zeros(dim, dim);
        cross.view_mut((0, 0), (m, m)).copy_from(&self.kwk);
        cross.view_mut((0, m), (m, q)).copy_from(&kwj_theta);
        cross.view_mut((m, 0), (q, m)).copy_from(&kwj_theta.transpose());
        cross.view_mut((m, m), (q, q)).copy_from(&jwj_theta);
        let mut matrix = cross.clone();
        {
            let mut block = matrix.view_mut((m, m), (q, q));
            block += &gram_theta * (lambda * self.n);
        }
        symmetrize(&mut matrix);

        let mut rhs = DVector::zeros(dim);
        rhs.rows_mut(0, m).copy_from(&self.ky);
        rhs.rows_mut(m, q).copy_from(&jy_theta);

        let factor = symmetric_pinv_factor(&matrix, PINV_RTOL)?;
        let coef = factor.tr_mul(&(&factor * &rhs));
        let edf = (&factor * &cross).component_mul(&factor).sum();
        let rss = (self.y_sqnorm - 2.0 * rhs.dot(&coef) + coef.dot(&(&cross * &coef))).max(0.0);
        Ok(SmoothingSystem {
            lambda,
            theta: theta.to_vec(),
            m,
            matrix,
            factor,
            rhs,
            coef,
            edf,
            rss,
            n: self.n,
        })
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Solution of the reduced system at fixed smoothing parameters.
#[derive(Debug, Clone)]
pub struct SmoothingSystem {
    pub lambda: f64,
    pub theta: Vec<f64>,
    m: usize,
    /// `(m + q) x (m + q)` system matrix.
    pub matrix: DMatrix<f64>,
    /// Root of the pseudoinverse, `M^+ = F'F`.
    pub factor: DMatrix<f64>,
    pub rhs: DVector<f64>,
    pub coef: DVector<f64>,
    /// `tr(W S~)`.
    pub edf: f64,
    /// Residual sum of squares of the rounded fit.
    pub rss: f64,
    n: f64,
}

impl SmoothingSystem {
    /// Pseudoinverse `M^+` of the system matrix.
    pub fn pinv(&self) -> DMatrix<f64> {
        self.factor.tr_mul(&self.factor)
    }

    pub fn d_hat(&self) -> Vec<f64> {
        self.coef.rows(0, self.m).iter().copied().collect()
    }

    pub fn c_hat(&self) -> Vec<f64> {
        self.coef.rows(self.m, self.coef.len() - self.m).iter().copied().collect()
    }

    /// GCV score `n RSS / (n - edf)^2`.
    pub fn gcv(&self) -> Result<f64> {
        gcv_from_parts(self.n, self.rss, self.edf)
    }

    /// Norm of the normal-equation residual `M b - rhs`.
    pub fn stationarity_residual(&self) -> f64 {
        (&self.matrix * &self.coef - &self.rhs).norm()
    }
}

fn gcv_from_parts(n: f64, rss: f64, edf: f64) -> Result<f64> {
    if !(edf < n) {
        return Err(Error::Numerical(format!(
            "effective degrees of freedom {edf} reach the sample size {n}"
        )));
    }
    Ok(n * rss / ((n - edf) * (n - edf)))
}

/// `J~_theta = sum_k theta_k J~_k`.
pub fn combine_terms(contrast: &[DMatrix<f64>], theta: &[f64]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(contrast[0].nrows(), contrast[0].ncols());
    for (j, &t) in contrast.iter().zip(theta) {
        out += j * t;
    }
    out
}

/// Solve the reduced system in square-root form.
///
/// Singular values of `A` below `sqrt(PINV_RTOL)` times the largest are
/// dropped, which is the eigenvalue cutoff `PINV_RTOL` on `A'A`.
pub fn solve_system(
    ud: &UniqueDesign,
    null: &DMatrix<f64>,
    contrast: &[DMatrix<f64>],
    gram: &[DMatrix<f64>],
    lambda: f64,
    theta: &[f64],
) -> Result<SmoothingSystem> {
    let (m, q) = check_blocks(ud, null, contrast, gram)?;
    check_smoothing(lambda, theta, contrast.len())?;
    let u = ud.u();
    let n = ud.n as f64;
    let j_theta = combine_terms(contrast, theta);
    let mut top = DMatrix::zeros(u, m + q);
    let mut b_top = DVector::zeros(u);
    for t in 0..u {
        let sw = (ud.weights[t] as f64).sqrt();
        for c in 0..m {
            top[(t, c)] = sw * null[(t, c)];
        }
        for h in 0..q {
            top[(t, m + h)] = sw * j_theta[(t, h)];
        }
        b_top[t] = ud.y_sums[t] / sw;
    }
    let penalty = combine_terms(gram, theta) * (lambda * n);
    let svd = PenalizedSvd::new(&top, &penalty)?;
    let coef = svd.solve(&b_top);
    let resid = &top * &coef - &b_top;
    let rss = ud.within_ss + resid.norm_squared();
    let mut matrix = top.tr_mul(&top);
    {
        let mut block = matrix.view_mut((m, m), (q, q));
        block += &penalty;
    }
    symmetrize(&mut matrix);
    Ok(SmoothingSystem {
        lambda,
        theta: theta.to_vec(),
        m,
        matrix,
        factor: svd.pinv_factor(),
        rhs: top.tr_mul(&b_top),
        coef,
        edf: svd.trace_top(),
        rss,
        n,
    })
}

/// Coefficients `(d_hat, c_hat)` of the reduced system.
pub fn solve_coefficients(
    ud: &UniqueDesign,
    null: &DMatrix<f64>,
    contrast: &[DMatrix<f64>],
    gram: &[DMatrix<f64>],
    lambda: f64,
    theta: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let sys = solve_system(ud, null, contrast, gram, lambda, theta)?;
    Ok((sys.d_hat(), sys.c_hat()))
}

/// Fitted values at the unique points, `S~ y~ = X~ M^+ X~' y~`.
pub fn reduced_smoother_apply(
    null: &DMatrix<f64>,
    contrast: &[DMatrix<f64>],
    system: &SmoothingSystem,
    y_sums: &[f64],
) -> Result<Vec<f64>> {
    let j_theta = combine_terms(contrast, &system.theta);
    let (u, m, q) = (null.nrows(), null.ncols(), j_theta.ncols());
    if y_sums.len() != u || system.factor.ncols() != m + q {
        return Err(Error::Dimension("smoother inputs have inconsistent sizes".into()));
    }
    let y = DVector::from_column_slice(y_sums);
    let mut xty = DVector::zeros(m + q);
    xty.rows_mut(0, m).copy_from(&null.tr_mul(&y));
    xty.rows_mut(m, q).copy_from(&j_theta.tr_mul(&y));
    let b = system.factor.tr_mul(&(&system.factor * xty));
    let fitted = null * b.rows(0, m) + &j_theta * b.rows(m, q);
    Ok(fitted.iter().copied().collect())
}

/// GCV from the sufficient statistics and fitted values at the unique points.
pub fn gcv_score(ud: &UniqueDesign, fitted_unique: &[f64], edf: f64) -> Result<f64> {
    if fitted_unique.len() != ud.u() {
        return Err(Error::Dimension(format!(
            "{} fitted values for {} unique points",
            fitted_unique.len(),
            ud.u()
        )));
    }
    let mut cross = 0.0;
    let mut weighted = 0.0;
    for ((&f, &ys), &w) in fitted_unique.iter().zip(&ud.y_sums).zip(&ud.weights) {
        cross += ys * f;
        weighted += w as f64 * f * f;
    }
    let rss = ud.y_sqnorm - 2.0 * cross + weighted;
    gcv_from_parts(ud.n as f64, rss, edf)
}
