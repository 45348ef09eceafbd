//! Rounding-induced error: exact loss, subsample risk estimates, relative-risk
//! bounds, the Taylor bound and the empirical rounding distance.
//!
//! All quantities compare the dense smoother `S` built from unrounded
//! predictors with `S_r` built from rounded ones. Both share the same knots
//! and smoothing parameters, so `D = S - S_r` isolates the effect of rounding.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{gram_matrices, knot_rows, select_knots_binsample, ModelSpec};
use crate::error::{Error, Result};
use crate::kernel::{rk_polynomial_deriv_unchecked, scaled_bernoulli, KernelSpec};
use crate::linalg::{median, power_iteration, PenalizedSvd};
use crate::rounding::{compress, round_value, rounded_points};
use crate::solver::{basis_matrix, combine_terms, fit, FitResult};

/// Largest sample on which dense `n x n` smoothers are formed.
pub const DENSE_CAP: usize = 2000;

const POWER_TOL: f64 = 1e-8;
const POWER_MAX_ITER: usize = 500;

/// Dense smoothing matrix `S = X M^+ X'` with `M = X'X + lambda n Q_theta`,
/// formed as `U U'` from the kept left singular vectors of the penalized
/// least-squares matrix.
pub fn smoothing_matrix(
    points: &DMatrix<f64>,
    knots: &DMatrix<f64>,
    model: &ModelSpec,
    lambda: f64,
    theta: &[f64],
) -> Result<DMatrix<f64>> {
    let n = points.nrows();
    if n > DENSE_CAP {
        return Err(Error::InvalidArgument(format!(
            "dense smoother needs n <= {DENSE_CAP}, got {n}"
        )));
    }
    if !(lambda > 0.0) || theta.len() != model.s() || theta.iter().any(|t| !(*t > 0.0)) {
        return Err(Error::InvalidArgument(
            "lambda and theta must be positive, one theta per term".into(),
        ));
    }
    let x = basis_matrix(points, knots, model, theta);
    let penalty = combine_terms(&gram_matrices(knots, model), theta) * (lambda * n as f64);
    let svd = PenalizedSvd::new(&x, &penalty)?;
    Ok(&svd.u_top * svd.u_top.transpose())
}

fn check_sample(y: &[f64], x: &DMatrix<f64>, model: &ModelSpec) -> Result<()> {
    model.validate()?;
    if y.len() != x.nrows() {
        return Err(Error::Dimension(format!(
            "{} responses but {} predictor rows",
            y.len(),
            x.nrows()
        )));
    }
    if x.ncols() != model.p() {
        return Err(Error::Dimension(format!(
            "{} predictor columns for a model with {} predictors",
            x.ncols(),
            model.p()
        )));
    }
    if y.len() > DENSE_CAP {
        return Err(Error::InvalidArgument(format!(
            "exact loss needs n <= {DENSE_CAP}, got {}",
            y.len()
        )));
    }
    Ok(())
}

/// Knots selected from the unrounded sample.
fn unrounded_knots(y: &[f64], x: &DMatrix<f64>, model: &ModelSpec) -> Result<DMatrix<f64>> {
    let ud = compress(y, x, &model.rounding(None)?)?;
    let idx = select_knots_binsample(&ud, model.knots.min(ud.u()), model.seed)?;
    knot_rows(&ud, &idx)
}

fn check_r(r: f64) -> Result<()> {
    if r > 0.0 && r <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "rounding parameter must lie in (0, 1], got {r}"
        )))
    }
}

/// Loss `L(r) = n^-1 |(S - S_r) y|^2` at fixed smoothing parameters.
pub fn loss_exact(
    y: &[f64],
    x: &DMatrix<f64>,
    model: &ModelSpec,
    lambda: f64,
    theta: &[f64],
    r: f64,
) -> Result<f64> {
    check_sample(y, x, model)?;
    check_r(r)?;
    let knots = unrounded_knots(y, x, model)?;
    let exact = rounded_points(x, &model.rounding(None)?)?;
    let rounded = rounded_points(x, &model.rounding(Some(r))?)?;
    let d = smoothing_matrix(&exact, &knots, model, lambda, theta)?
        - smoothing_matrix(&rounded, &knots, model, lambda, theta)?;
    Ok((d * DVector::from_column_slice(y)).norm_squared() / y.len() as f64)
}

/// Bound on the relative risk `U(r)`: `n^-1 lambda_{1,r} (1 + 1/snr)`.
pub fn relative_risk_bound(lambda_1r: f64, n: usize, snr: f64) -> Result<f64> {
    if !(snr > 0.0) {
        return Err(Error::InvalidArgument(format!("snr must be positive, got {snr}")));
    }
    if n == 0 || lambda_1r < 0.0 {
        return Err(Error::InvalidArgument("need n > 0 and lambda_1r >= 0".into()));
    }
    Ok(lambda_1r / n as f64 * (1.0 + 1.0 / snr))
}

/// Derivative of the fitted basis `[K', J_theta']` at normalized points.
pub fn derivative_design(points: &DMatrix<f64>, fit: &FitResult) -> Result<DMatrix<f64>> {
    let order = match fit.model.predictors.as_slice() {
        [KernelSpec::Polynomial { order }] => *order as usize,
        _ => {
            return Err(Error::InvalidArgument(
                "the Taylor bound needs exactly one continuous predictor".into(),
            ))
        }
    };
    if points.ncols() != 1 {
        return Err(Error::Dimension("sample points must have one column".into()));
    }
    let q = fit.q();
    let theta = fit.theta[0];
    Ok(DMatrix::from_fn(points.nrows(), order + q, |i, c| {
        let x = points[(i, 0)];
        match c {
            0 => 0.0,
            c if c < order => scaled_bernoulli(c - 1, x),
            c => theta * rk_polynomial_deriv_unchecked(order, x, fit.knots[(c - order, 0)]),
        }
    }))
}

/// Largest eigenvalue `lambda_1*` of `X'X` for the derivative design, by power iteration.
pub fn taylor_eigenvalue(points: &DMatrix<f64>, fit: &FitResult) -> Result<f64> {
    let xd = derivative_design(points, fit)?;
    power_iteration(&xd.tr_mul(&xd), POWER_TOL, POWER_MAX_ITER)
}

/// First-order bound `r^2 lambda_1* / (4 n)` on the relative rounding error.
pub fn taylor_bound(points: &DMatrix<f64>, fit: &FitResult, r: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::InvalidArgument(format!("rounding parameter must lie in [0, 1], got {r}")));
    }
    let lambda = taylor_eigenvalue(points, fit)?;
    Ok(r * r * lambda / (4.0 * points.nrows() as f64))
}

/// Observed relative rounding error `n^-1 sum (f(x_i) - f(z_i))^2 / |b|^2` of a fit.
pub fn observed_rounding_error(points: &DMatrix<f64>, fit: &FitResult, r: f64) -> Result<f64> {
    check_r(r)?;
    let mut rounded = points.clone();
    for (j, k) in fit.model.predictors.iter().enumerate() {
        if !k.is_nominal() {
            for i in 0..rounded.nrows() {
                rounded[(i, j)] = round_value(points[(i, j)], r)?;
            }
        }
    }
    let a = fit.evaluate_normalized(points);
    let b = fit.evaluate_normalized(&rounded);
    let sq: f64 = a.iter().zip(&b).map(|(u, v)| (u - v) * (u - v)).sum();
    let coef: f64 = fit.d_hat.iter().chain(&fit.c_hat).map(|v| v * v).sum();
    Ok(sq / points.nrows() as f64 / coef)
}

/// `sup_t |F_{n,r}(t) - F_n(t)|` between the empirical CDFs of rounded and unrounded `x`.
pub fn empirical_rounding_distance(x: &[f64], r: f64) -> Result<f64> {
    if x.is_empty() {
        return Err(Error::InvalidArgument("empty sample".into()));
    }
    if let Some(&v) = x.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::OutOfDomain {
            value: v,
            domain: "[0, 1]",
        });
    }
    let mut a = x.to_vec();
    let mut b = x.iter().map(|&v| round_value(v, r)).collect::<Result<Vec<_>>>()?;
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let n = a.len() as f64;
    let mut sup: f64 = 0.0;
    for &t in a.iter().chain(&b) {
        // right limits (<= t) and left limits (< t)
        let right = a.partition_point(|v| *v <= t) as f64 - b.partition_point(|v| *v <= t) as f64;
        let left = a.partition_point(|v| *v < t) as f64 - b.partition_point(|v| *v < t) as f64;
        sup = sup.max(right.abs()).max(left.abs());
    }
    Ok(sup / n)
}

/// Settings of a risk sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskConfig {
    /// Subsample size `n~`.
    pub subsample: usize,
    pub replications: usize,
    pub seed: u64,
}

impl Default for RiskConfig {
    fn default() -> Self {
        RiskConfig {
            subsample: 500,
            replications: 5,
            seed: 0,
        }
    }
}

/// Terms of one `(r, replication)` evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskRow {
    pub r: f64,
    pub replication: usize,
    /// `n~^-1 |D y|^2`.
    pub loss: f64,
    /// `n~^-1 |D eta_hat|^2`.
    pub bias: f64,
    /// `n~^-1 sigma_hat^2 tr(D^2)`.
    pub trace: f64,
    pub risk_hat: f64,
    /// Largest eigenvalue of `D^2`.
    pub lambda_1r: f64,
    pub rel_risk_bound: f64,
    pub taylor_bound: Option<f64>,
    pub d_nr: f64,
    pub sigma2_hat: f64,
    pub eta_sqnorm: f64,
}

/// Per-`r` medians over replications plus the per-replication rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub r_values: Vec<f64>,
    pub loss: Vec<f64>,
    pub risk_hat: Vec<f64>,
    pub rel_risk_bound: Vec<f64>,
    pub taylor_bound: Vec<Option<f64>>,
    pub d_nr: Vec<f64>,
    pub subsample_size: usize,
    pub replications: usize,
    pub seed: u64,
    pub rows: Vec<RiskRow>,
}

fn replication_rows(
    y: &[f64],
    x: &DMatrix<f64>,
    model: &ModelSpec,
    r_values: &[f64],
    config: &RiskConfig,
    rep: usize,
) -> Result<Vec<RiskRow>> {
    let n = y.len();
    let nt = config.subsample;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(rep as u64 + 1);
    let mut rows = index::sample(&mut rng, n, nt).into_vec();
    rows.sort_unstable();
    let y_sub: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
    let x_sub = x.select_rows(&rows);

    let fitted = fit(&y_sub, &x_sub, &model.rounding(None)?, model)?;
    let exact = rounded_points(&x_sub, &model.rounding(None)?)?;
    let eta = DVector::from_vec(fitted.evaluate_normalized(&exact));
    let y_vec = DVector::from_vec(y_sub);
    let s = smoothing_matrix(&exact, &fitted.knots, model, fitted.lambda, &fitted.theta)?;
    let sigma2 = fitted.sigma2_hat.max(0.0);
    let eta_sqnorm = eta.norm_squared();
    let snr = if sigma2 > 0.0 {
        eta_sqnorm / (nt as f64 * sigma2)
    } else {
        f64::INFINITY
    };
    let single_continuous = matches!(model.predictors.as_slice(), [KernelSpec::Polynomial { .. }]);

    r_values
        .iter()
        .map(|&r| {
            let rounded = rounded_points(&x_sub, &model.rounding(Some(r))?)?;
            let s_r = smoothing_matrix(&rounded, &fitted.knots, model, fitted.lambda, &fitted.theta)?;
            let d = &s - s_r;
            let bias = (&d * &eta).norm_squared() / nt as f64;
            let trace = sigma2 * d.norm_squared() / nt as f64;
            let spectral = SymmetricEigen::new(d.clone()).eigenvalues.amax();
            let lambda_1r = spectral * spectral;
            let d_nr = (0..model.p())
                .filter(|&j| !model.predictors[j].is_nominal())
                .map(|j| empirical_rounding_distance(exact.column(j).as_slice(), r))
                .try_fold(0.0f64, |acc, v| v.map(|v| acc.max(v)))?;
            Ok(RiskRow {
                r,
                replication: rep,
                loss: (&d * &y_vec).norm_squared() / nt as f64,
                bias,
                trace,
                risk_hat: bias + trace,
                lambda_1r,
                rel_risk_bound: relative_risk_bound(lambda_1r, nt, snr)?,
                taylor_bound: if single_continuous {
                    Some(taylor_bound(&exact, &fitted, r)?)
                } else {
                    None
                },
                d_nr,
                sigma2_hat: sigma2,
                eta_sqnorm,
            })
        })
        .collect()
}

/// Sweep rounding parameters over seeded subsamples.
///
/// Each replication draws `n~` rows without replacement, fits the unrounded
/// model for `eta_hat`, `sigma_hat^2` and the smoothing parameters, and
/// evaluates every `r` against that fit.
pub fn risk_sweep(
    y: &[f64],
    x: &DMatrix<f64>,
    model: &ModelSpec,
    r_values: &[f64],
    config: &RiskConfig,
) -> Result<RiskReport> {
    model.validate()?;
    if y.len() != x.nrows() {
        return Err(Error::Dimension(format!(
            "{} responses but {} predictor rows",
            y.len(),
            x.nrows()
        )));
    }
    if config.subsample > y.len() {
        return Err(Error::InvalidArgument(format!(
            "subsample size {} exceeds n = {}",
            config.subsample,
            y.len()
        )));
    }
    if config.subsample > DENSE_CAP || config.subsample < 2 {
        return Err(Error::InvalidArgument(format!(
            "subsample size must lie in [2, {DENSE_CAP}], got {}",
            config.subsample
        )));
    }
    if config.replications == 0 {
        return Err(Error::InvalidArgument("at least one replication is required".into()));
    }
    if r_values.is_empty() {
        return Err(Error::InvalidArgument("no rounding parameters to sweep".into()));
    }
    for &r in r_values {
        check_r(r)?;
    }

    let per_rep: Vec<Vec<RiskRow>> = (0..config.replications)
        .into_par_iter()
        .map(|rep| replication_rows(y, x, model, r_values, config, rep))
        .collect::<Result<_>>()?;

    let column = |k: usize, get: &dyn Fn(&RiskRow) -> f64| {
        let mut v: Vec<f64> = per_rep.iter().map(|rows| get(&rows[k])).collect();
        median(&mut v)
    };
    let nr = r_values.len();
    let taylor_bound = (0..nr)
        .map(|k| {
            let mut v: Vec<f64> = per_rep.iter().filter_map(|rows| rows[k].taylor_bound).collect();
            (!v.is_empty()).then(|| median(&mut v))
        })
        .collect();
    Ok(RiskReport {
        r_values: r_values.to_vec(),
        loss: (0..nr).map(|k| column(k, &|row| row.loss)).collect(),
        risk_hat: (0..nr).map(|k| column(k, &|row| row.risk_hat)).collect(),
        rel_risk_bound: (0..nr).map(|k| column(k, &|row| row.rel_risk_bound)).collect(),
        taylor_bound,
        d_nr: (0..nr).map(|k| column(k, &|row| row.d_nr)).collect(),
        subsample_size: config.subsample,
        replications: config.replications,
        seed: config.seed,
        rows: per_rep.into_iter().flatten().collect(),
    })
}

/// Median estimated risk `R^(r)` over replications.
pub fn risk_estimate(
    y: &[f64],
    x: &DMatrix<f64>,
    model: &ModelSpec,
    r: f64,
    n_tilde: usize,
    replications: usize,
    seed: u64,
) -> Result<f64> {
    let config = RiskConfig {
        subsample: n_tilde,
        replications,
        seed,
    };
    Ok(risk_sweep(y, x, model, &[r], &config)?.risk_hat[0])
}
