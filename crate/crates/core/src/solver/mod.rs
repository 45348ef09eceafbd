//! Fitting, GCV smoothing-parameter selection and prediction.

mod select;
mod system;

pub use select::{balanced_theta, select_smoothing, GcvPoint, SearchBounds, SmoothingSelection};
pub use system::{
    combine_terms, gcv_score, reduced_smoother_apply, solve_coefficients, solve_system,
    CrossProducts, SmoothingSystem,
};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::design::{
    build_contrast_matrices, build_null_matrix, contrast_matrices, knot_rows, null_matrix,
    select_knots_binsample, ModelSpec,
};
use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::rounding::{compress, RoundingSpec, Scale, UniqueDesign};

/// A fitted model: coefficients, smoothing parameters and everything needed
/// to evaluate the function at new inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub d_hat: Vec<f64>,
    pub c_hat: Vec<f64>,
    pub lambda: f64,
    pub theta: Vec<f64>,
    pub gcv: f64,
    /// Effective degrees of freedom `tr(W S~)`.
    pub edf: f64,
    pub rss: f64,
    pub sigma2_hat: f64,
    pub r_squared: f64,
    pub n: u64,
    pub u: usize,
    /// `q x p` knots on the normalized scale.
    pub knots: DMatrix<f64>,
    pub scales: Vec<Option<Scale>>,
    pub rounding: RoundingSpec,
    pub model: ModelSpec,
    /// Root `F` of the system pseudoinverse, `M^+ = F'F`; scales posterior variances.
    pub posterior_factor: DMatrix<f64>,
}

/// Options of [`fit_with`].
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FitOptions {
    pub bounds: SearchBounds,
    /// Skip the search and use these smoothing parameters.
    pub fixed: Option<(f64, f64)>,
}

fn check_inputs(rounding: &RoundingSpec, model: &ModelSpec) -> Result<()> {
    rounding.validate()?;
    model.validate()?;
    if rounding.len() != model.p() {
        return Err(Error::Dimension(format!(
            "rounding has {} predictors, model has {}",
            rounding.len(),
            model.p()
        )));
    }
    for (j, (r, k)) in rounding.predictors.iter().zip(&model.predictors).enumerate() {
        match (r, k) {
            (crate::rounding::PredictorRounding::Nominal { levels: a }, KernelSpec::Nominal { levels: b })
                if a == b => {}
            (crate::rounding::PredictorRounding::Nominal { .. }, _) | (_, KernelSpec::Nominal { .. }) => {
                return Err(Error::InvalidArgument(format!(
                    "predictor {j}: rounding {r:?} does not match kernel {k:?}"
                )))
            }
            _ => {}
        }
    }
    Ok(())
}

/// Fit with GCV-selected smoothing parameters.
pub fn fit(y: &[f64], x: &DMatrix<f64>, rounding: &RoundingSpec, model: &ModelSpec) -> Result<FitResult> {
    fit_with(y, x, rounding, model, &FitOptions::default())
}

/// Fit with explicit search options.
pub fn fit_with(
    y: &[f64],
    x: &DMatrix<f64>,
    rounding: &RoundingSpec,
    model: &ModelSpec,
    options: &FitOptions,
) -> Result<FitResult> {
    check_inputs(rounding, model)?;
    let ud = compress(y, x, rounding)?;
    fit_design(&ud, rounding, model, options)
}

/// Fit from already compressed data.
pub fn fit_design(
    ud: &UniqueDesign,
    rounding: &RoundingSpec,
    model: &ModelSpec,
    options: &FitOptions,
) -> Result<FitResult> {
    check_inputs(rounding, model)?;
    let knots = select_knots_binsample(ud, model.knots.min(ud.u()), model.seed)?;
    let null = build_null_matrix(ud, model)?;
    let (contrast, gram) = build_contrast_matrices(ud, &knots, model)?;
    let cp = CrossProducts::new(ud, &null, &contrast, &gram)?;

    let (lambda, theta) = match options.fixed {
        Some((lambda, scale)) => (lambda, balanced_theta(&cp).iter().map(|t| t * scale).collect()),
        None => {
            let sel = select_smoothing(&cp, &options.bounds)?;
            (sel.lambda, sel.theta)
        }
    };
    let sys = solve_system(ud, &null, &contrast, &gram, lambda, &theta)?;
    let gcv = sys.gcv()?;
    let n = ud.n as f64;
    let mean = ud.y_total / n;
    let centered = ud.within_ss
        + ud.weights
            .iter()
            .zip(&ud.y_sums)
            .map(|(&w, &ys)| w as f64 * (ys / w as f64 - mean).powi(2))
            .sum::<f64>();
    Ok(FitResult {
        d_hat: sys.d_hat(),
        c_hat: sys.c_hat(),
        lambda,
        theta,
        gcv,
        edf: sys.edf,
        rss: sys.rss,
        sigma2_hat: sys.rss / (n - sys.edf),
        r_squared: if centered > 0.0 { 1.0 - sys.rss / centered } else { 0.0 },
        n: ud.n,
        u: ud.u(),
        knots: knot_rows(ud, &knots)?,
        scales: ud.scales.clone(),
        rounding: rounding.clone(),
        model: model.clone(),
        posterior_factor: sys.factor,
    })
}

/// Basis rows `[K, J_theta]` at normalized points.
pub fn basis_matrix(
    points: &DMatrix<f64>,
    knots: &DMatrix<f64>,
    model: &ModelSpec,
    theta: &[f64],
) -> DMatrix<f64> {
    let null = null_matrix(points, model);
    let j_theta = combine_terms(&contrast_matrices(points, knots, model), theta);
    let (n, m, q) = (points.nrows(), null.ncols(), j_theta.ncols());
    let mut x = DMatrix::zeros(n, m + q);
    x.view_mut((0, 0), (n, m)).copy_from(&null);
    x.view_mut((0, m), (n, q)).copy_from(&j_theta);
    x
}

impl FitResult {
    pub fn q(&self) -> usize {
        self.knots.nrows()
    }

    /// Map raw inputs to the normalized scale, rejecting out-of-range values.
    pub fn normalize(&self, x_new: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let p = self.model.p();
        if x_new.ncols() != p {
            return Err(Error::Dimension(format!(
                "{} input columns for a model with {p} predictors",
                x_new.ncols()
            )));
        }
        let mut out = DMatrix::zeros(x_new.nrows(), p);
        for j in 0..p {
            for i in 0..x_new.nrows() {
                let v = x_new[(i, j)];
                if !v.is_finite() {
                    return Err(Error::NonFinite { column: j, row: i });
                }
                out[(i, j)] = match (&self.scales[j], self.model.predictors[j]) {
                    (Some(scale), _) => {
                        if v < scale.min || v > scale.max {
                            return Err(Error::OutOfRange {
                                column: j,
                                value: v,
                                min: scale.min,
                                max: scale.max,
                            });
                        }
                        scale.to_unit(v).clamp(0.0, 1.0)
                    }
                    (None, KernelSpec::Nominal { levels }) => {
                        if v.fract() != 0.0 || v < 1.0 || v > levels as f64 {
                            return Err(Error::BadLevel {
                                column: j,
                                row: i,
                                code: v,
                                levels,
                            });
                        }
                        v
                    }
                    (None, _) => unreachable!("continuous predictor without scale"),
                };
            }
        }
        Ok(out)
    }

    /// Basis rows `[K, J_theta]` at normalized points.
    pub fn basis(&self, points: &DMatrix<f64>) -> DMatrix<f64> {
        basis_matrix(points, &self.knots, &self.model, &self.theta)
    }

    fn coefficients(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.d_hat.len() + self.c_hat.len(),
            self.d_hat.iter().chain(&self.c_hat).copied(),
        )
    }

    /// Evaluate the fitted function at normalized points.
    pub fn evaluate_normalized(&self, points: &DMatrix<f64>) -> Vec<f64> {
        (self.basis(points) * self.coefficients()).iter().copied().collect()
    }

    /// Posterior standard deviations at normalized points.
    pub fn posterior_sd_normalized(&self, points: &DMatrix<f64>) -> Vec<f64> {
        let fx = &self.posterior_factor * self.basis(points).transpose();
        fx.column_iter()
            .map(|c| (self.sigma2_hat.max(0.0) * c.norm_squared()).sqrt())
            .collect()
    }
}

/// Predictions `K d + J_theta c` at unrounded inputs.
pub fn predict(fit: &FitResult, x_new: &DMatrix<f64>) -> Result<Vec<f64>> {
    let points = fit.normalize(x_new)?;
    Ok(fit.evaluate_normalized(&points))
}

/// Half-widths of Bayesian confidence intervals at `level`.
pub fn bayes_interval(fit: &FitResult, x_new: &DMatrix<f64>, level: f64) -> Result<Vec<f64>> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!("interval level must lie in (0, 1), got {level}")));
    }
    let points = fit.normalize(x_new)?;
    let z = Normal::standard().inverse_cdf(0.5 + level / 2.0);
    Ok(fit
        .posterior_sd_normalized(&points)
        .into_iter()
        .map(|sd| z * sd)
        .collect())
}
