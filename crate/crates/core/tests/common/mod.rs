#![allow(dead_code)]

use bigssa::{
    bernoulli_scaled, rk_nominal, rk_polynomial, Factor, KernelSpec, ModelSpec, PredictorRounding,
    RoundingSpec,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Full-size penalized fit on the rounded rows, built without any compression.
pub struct DenseFit {
    pub coef: DVector<f64>,
    pub fitted: DVector<f64>,
    pub smoother: DMatrix<f64>,
    pub pinv: DMatrix<f64>,
    /// `Sigma^+ V'` over kept components, a root of `pinv`.
    pub pinv_factor: DMatrix<f64>,
    pub basis: DMatrix<f64>,
    pub gcv: f64,
    pub edf: f64,
}

/// Normalize to [0, 1] and round with plain `round(x / r) * r`.
pub fn dense_points(x: &DMatrix<f64>, rounding: &RoundingSpec) -> DMatrix<f64> {
    let mut out = x.clone();
    for (j, rule) in rounding.predictors.iter().enumerate() {
        let col = x.column(j);
        let (lo, hi) = (col.min(), col.max());
        for i in 0..x.nrows() {
            out[(i, j)] = match *rule {
                PredictorRounding::Nominal { .. } => x[(i, j)],
                PredictorRounding::Exact => (x[(i, j)] - lo) / (hi - lo),
                PredictorRounding::Continuous { r } => ((x[(i, j)] - lo) / (hi - lo) / r).round() * r,
            };
        }
    }
    out
}

fn factor_kernel(kernel: &KernelSpec, f: Factor, a: f64, b: f64) -> f64 {
    match (f, kernel) {
        (Factor::Omit, _) => 1.0,
        (Factor::Null(v), _) => {
            bernoulli_scaled(v as usize, a).unwrap() * bernoulli_scaled(v as usize, b).unwrap()
        }
        (Factor::Contrast, KernelSpec::Polynomial { order }) => rk_polynomial(*order, a, b).unwrap(),
        (Factor::Contrast, KernelSpec::Nominal { levels }) => {
            rk_nominal(*levels, a as usize, b as usize).unwrap()
        }
    }
}

pub fn term_value(model: &ModelSpec, k: usize, a: &[f64], b: &[f64]) -> f64 {
    model.terms[k]
        .factors
        .iter()
        .enumerate()
        .map(|(j, &f)| factor_kernel(&model.predictors[j], f, a[j], b[j]))
        .product()
}

fn row(m: &DMatrix<f64>, i: usize) -> Vec<f64> {
    m.row(i).iter().copied().collect()
}

/// `[K, sum_k theta_k J_k]` at the given points.
pub fn dense_basis(points: &DMatrix<f64>, knots: &DMatrix<f64>, model: &ModelSpec, theta: &[f64]) -> DMatrix<f64> {
    let null_cols = model.null_columns();
    let m = 1 + null_cols.len();
    let q = knots.nrows();
    let mut x = DMatrix::zeros(points.nrows(), m + q);
    for i in 0..points.nrows() {
        let p = row(points, i);
        x[(i, 0)] = 1.0;
        for (c, factors) in null_cols.iter().enumerate() {
            x[(i, c + 1)] = factors
                .iter()
                .zip(&p)
                .map(|(f, &v)| match f {
                    Factor::Null(w) => bernoulli_scaled(*w as usize, v).unwrap(),
                    _ => 1.0,
                })
                .product();
        }
        for h in 0..q {
            let z = row(knots, h);
            x[(i, m + h)] = (0..model.s()).map(|k| theta[k] * term_value(model, k, &p, &z)).sum();
        }
    }
    x
}

pub fn dense_gram(knots: &DMatrix<f64>, model: &ModelSpec, theta: &[f64]) -> DMatrix<f64> {
    let q = knots.nrows();
    DMatrix::from_fn(q, q, |a, b| {
        let (za, zb) = (row(knots, a), row(knots, b));
        (0..model.s()).map(|k| theta[k] * term_value(model, k, &za, &zb)).sum()
    })
}

pub fn svd_pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    let top = m.clone().svd(false, false).singular_values.max();
    m.clone().pseudo_inverse(1e-12 * top).unwrap()
}

/// Least-squares solve of `[X; sqrt(lambda n) (0 | L')] b = [y; 0]` on all
/// `n` rows, where `Q_theta = L L'`, by SVD.
pub fn dense_fit(
    y: &[f64],
    points: &DMatrix<f64>,
    knots: &DMatrix<f64>,
    model: &ModelSpec,
    lambda: f64,
    theta: &[f64],
) -> DenseFit {
    let n = points.nrows();
    let q = knots.nrows();
    let x = dense_basis(points, knots, model, theta);
    let m = x.ncols() - q;
    let eig = dense_gram(knots, model, theta).symmetric_eigen();
    let mut a = DMatrix::zeros(n + q, m + q);
    a.rows_mut(0, n).copy_from(&x);
    for i in 0..q {
        let root = (lambda * n as f64 * eig.eigenvalues[i].max(0.0)).sqrt();
        for h in 0..q {
            a[(n + i, m + h)] = root * eig.eigenvectors[(h, i)];
        }
    }
    let mut rhs = DVector::zeros(n + q);
    rhs.rows_mut(0, n).copy_from_slice(y);
    let svd = a.svd(true, true);
    let cutoff = 1e-6 * svd.singular_values.max();
    let coef = svd.solve(&rhs, cutoff).unwrap();
    let (uu, vt) = (svd.u.as_ref().unwrap(), svd.v_t.as_ref().unwrap());
    let mut pinv = DMatrix::zeros(m + q, m + q);
    let mut smoother = DMatrix::zeros(n, n);
    let mut factor_rows = Vec::new();
    for (i, &sv) in svd.singular_values.iter().enumerate() {
        if sv > cutoff {
            let v = vt.row(i).transpose();
            pinv += &v * v.transpose() / (sv * sv);
            factor_rows.push(vt.row(i) / sv);
            // X V / sv is the top block of the left singular vector
            let ut = uu.column(i).rows(0, n).into_owned();
            smoother += &ut * ut.transpose();
        }
    }
    let yv = DVector::from_column_slice(y);
    let fitted = &x * &coef;
    let edf = smoother.trace();
    let resid = &yv - &fitted;
    let gcv = n as f64 * resid.norm_squared() / ((n as f64 - edf) * (n as f64 - edf));
    DenseFit {
        coef,
        fitted,
        smoother,
        pinv,
        pinv_factor: DMatrix::from_rows(&factor_rows),
        basis: x,
        gcv,
        edf,
    }
}

pub fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let num: f64 = a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    num / den.max(1e-300)
}

/// A small random instance with `p_cont` continuous and `p_nom` nominal predictors.
pub fn random_instance(
    seed: u64,
    n: usize,
    p_cont: usize,
    nominal_levels: &[usize],
) -> (Vec<f64>, DMatrix<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = p_cont + nominal_levels.len();
    let mut x = DMatrix::zeros(n, p);
    for i in 0..n {
        for j in 0..p_cont {
            x[(i, j)] = rng.random::<f64>() * 3.0 - 1.0;
        }
        for (k, &f) in nominal_levels.iter().enumerate() {
            x[(i, p_cont + k)] = (rng.random_range(0..f) + 1) as f64;
        }
    }
    // every level present
    for (k, &f) in nominal_levels.iter().enumerate() {
        for l in 0..f {
            x[(l, p_cont + k)] = (l + 1) as f64;
        }
    }
    let y = (0..n)
        .map(|i| {
            let mut s = 0.0;
            for j in 0..p_cont {
                s += (2.0 * x[(i, j)]).sin();
            }
            for k in 0..nominal_levels.len() {
                s += 0.3 * x[(i, p_cont + k)];
            }
            s + 0.3 * (rng.random::<f64>() - 0.5)
        })
        .collect();
    (y, x)
}
