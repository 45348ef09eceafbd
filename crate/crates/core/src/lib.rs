//! Smoothing spline ANOVA for very large samples.
//!
//! Continuous predictors are rounded to a grid so that `n` observations
//! collapse to `u` unique covariate vectors. The penalized least-squares fit,
//! its GCV score and predictions are then computed from per-cell counts and
//! response sums alone, at a cost that depends on `u` and the knot count `q`
//! but not on `n`.
//!
//! ```
//! use bigssa::{fit, predict, KernelSpec, ModelSpec, RoundingSpec};
//! use nalgebra::DMatrix;
//!
//! let x: Vec<f64> = (0..400).map(|i| (i as f64 * 0.618).fract()).collect();
//! let y: Vec<f64> = x.iter().map(|v| (6.0 * v).sin()).collect();
//! let x = DMatrix::from_column_slice(400, 1, &x);
//!
//! let model = ModelSpec::additive(vec![KernelSpec::cubic()], 21, 0).unwrap();
//! let fitted = fit(&y, &x, &RoundingSpec::continuous(0.01).unwrap(), &model).unwrap();
//! assert!(fitted.u <= 101);
//! let yhat = predict(&fitted, &x).unwrap();
//! assert_eq!(yhat.len(), 400);
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::type_complexity)]

pub mod design;
pub mod error;
pub mod kernel;
pub mod linalg;
pub mod risk;
pub mod rounding;
pub mod sim;
pub mod solver;

pub use design::{default_knots, select_knots_binsample, Factor, ModelSpec, TermDef};
pub use error::{Error, Result};
pub use kernel::{bernoulli_scaled, rk_nominal, rk_polynomial, rk_polynomial_deriv, KernelSpec};
pub use risk::{
    empirical_rounding_distance, loss_exact, relative_risk_bound, risk_estimate, risk_sweep,
    taylor_bound, RiskConfig, RiskReport, RiskRow,
};
pub use rounding::{
    bin_index_vector, compress, round_value, u_upper_bound, PredictorRounding, RoundingSpec, Scale,
    UniqueDesign,
};
pub use sim::{
    eta_a, eta_b, generate_dataset, run_benchmark, true_mse, BenchmarkResult, BenchmarkRow,
    Scenario, TestFunction,
};
pub use solver::{
    bayes_interval, fit, fit_with, predict, select_smoothing, FitOptions, FitResult, SearchBounds,
};
