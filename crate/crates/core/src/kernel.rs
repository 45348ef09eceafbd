//! Reproducing kernels for polynomial smoothing splines on `[0, 1]` and for
//! nominal covariates.
//!
//! Polynomial splines of order `m` use the scaled Bernoulli polynomials
//! `k_v(x) = B_v(x) / v!`. The null space is spanned by `k_0, ..., k_{m-1}`
//! and the contrast space has reproducing kernel
//!
//! ```text
//! rho(x, z) = k_m(x) k_m(z) + (-1)^(m-1) k_{2m}(|x - z|)
//! ```
//!
//! Nominal covariates with `f` levels use the centered indicator kernel
//! `1{x = z} - 1/f`, which is orthogonal to the constant function.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Highest Bernoulli degree with hard-coded coefficients. Enough for `m <= 3`.
pub const MAX_BERNOULLI_DEGREE: usize = 6;

/// Highest supported polynomial spline order (quintic).
pub const MAX_ORDER: u8 = 3;

// Coefficients of B_v(x) in increasing powers of x.
const BERNOULLI: [&[f64]; MAX_BERNOULLI_DEGREE + 1] = [
    &[1.0],
    &[-0.5, 1.0],
    &[1.0 / 6.0, -1.0, 1.0],
    &[0.0, 0.5, -1.5, 1.0],
    &[-1.0 / 30.0, 0.0, 1.0, -2.0, 1.0],
    &[0.0, -1.0 / 6.0, 0.0, 5.0 / 3.0, -2.5, 1.0],
    &[1.0 / 42.0, 0.0, -0.5, 0.0, 2.5, -3.0, 1.0],
];

const FACTORIAL: [f64; MAX_BERNOULLI_DEGREE + 1] = [1.0, 1.0, 2.0, 6.0, 24.0, 120.0, 720.0];

/// Marginal kernel of one predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelSpec {
    /// Polynomial smoothing spline of order `m` (1 linear, 2 cubic, 3 quintic).
    Polynomial { order: u8 },
    /// Nominal covariate coded `1..=levels`.
    Nominal { levels: usize },
}

impl KernelSpec {
    pub fn polynomial(order: u8) -> Result<Self> {
        let spec = KernelSpec::Polynomial { order };
        spec.validate()?;
        Ok(spec)
    }

    pub fn cubic() -> Self {
        KernelSpec::Polynomial { order: 2 }
    }

    pub fn nominal(levels: usize) -> Result<Self> {
        let spec = KernelSpec::Nominal { levels };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Polynomial { order } if (1..=MAX_ORDER).contains(&order) => Ok(()),
            KernelSpec::Polynomial { order } => Err(Error::InvalidArgument(format!(
                "polynomial spline order must be in 1..={MAX_ORDER}, got {order}"
            ))),
            KernelSpec::Nominal { levels } if levels >= 2 => Ok(()),
            KernelSpec::Nominal { levels } => Err(Error::InvalidArgument(format!(
                "nominal predictor needs at least 2 levels, got {levels}"
            ))),
        }
    }

    pub fn is_nominal(&self) -> bool {
        matches!(self, KernelSpec::Nominal { .. })
    }

    /// Number of non-constant null-space functions (`m - 1` for polynomials).
    pub fn null_dim(&self) -> usize {
        match *self {
            KernelSpec::Polynomial { order } => order as usize - 1,
            KernelSpec::Nominal { .. } => 0,
        }
    }

    /// Contrast kernel `rho(x, z)`. Nominal inputs are level codes stored as floats.
    pub fn contrast(&self, x: f64, z: f64) -> Result<f64> {
        match *self {
            KernelSpec::Polynomial { order } => rk_polynomial(order, x, z),
            KernelSpec::Nominal { levels } => {
                rk_nominal(levels, level_of(x, levels)?, level_of(z, levels)?)
            }
        }
    }

    /// Null-space functions at `x`. Polynomials give `(k_0(x), ..., k_{m-1}(x))`;
    /// nominal predictors contribute nothing beyond the global intercept.
    pub fn null_basis(&self, x: f64) -> Result<Vec<f64>> {
        self.validate()?;
        match *self {
            KernelSpec::Polynomial { order } => {
                check_unit(x)?;
                Ok((0..order as usize).map(|v| scaled_bernoulli(v, x)).collect())
            }
            KernelSpec::Nominal { levels } => {
                level_of(x, levels)?;
                Ok(Vec::new())
            }
        }
    }

    /// Contrast kernel without domain checks. Callers guarantee validated inputs.
    #[inline]
    pub(crate) fn contrast_unchecked(&self, x: f64, z: f64) -> f64 {
        match *self {
            KernelSpec::Polynomial { order } => rk_polynomial_unchecked(order as usize, x, z),
            KernelSpec::Nominal { levels } => {
                let same = if x == z { 1.0 } else { 0.0 };
                same - 1.0 / levels as f64
            }
        }
    }
}

fn check_unit(x: f64) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(Error::OutOfDomain {
            value: x,
            domain: "[0, 1]",
        })
    }
}

fn level_of(x: f64, levels: usize) -> Result<usize> {
    if x.fract() == 0.0 && x >= 1.0 && x <= levels as f64 {
        Ok(x as usize)
    } else {
        Err(Error::OutOfDomain {
            value: x,
            domain: "nominal levels 1..=f",
        })
    }
}

/// Scaled Bernoulli polynomial `k_v(x) = B_v(x) / v!` (unchecked).
#[inline]
pub(crate) fn scaled_bernoulli(v: usize, x: f64) -> f64 {
    let coeffs = BERNOULLI[v];
    let mut acc = 0.0;
    for &c in coeffs.iter().rev() {
        acc = acc * x + c;
    }
    acc / FACTORIAL[v]
}

/// Scaled Bernoulli polynomial `k_v(x) = B_v(x) / v!` for `v <= 6`, `x` in `[0, 1]`.
pub fn bernoulli_scaled(v: usize, x: f64) -> Result<f64> {
    if v > MAX_BERNOULLI_DEGREE {
        return Err(Error::InvalidArgument(format!(
            "Bernoulli degree {v} exceeds {MAX_BERNOULLI_DEGREE}"
        )));
    }
    check_unit(x)?;
    Ok(scaled_bernoulli(v, x))
}

fn check_order(order: u8) -> Result<()> {
    KernelSpec::Polynomial { order }.validate()
}

#[inline]
pub(crate) fn rk_polynomial_unchecked(m: usize, x: f64, z: f64) -> f64 {
    let sign = if m % 2 == 1 { 1.0 } else { -1.0 };
    scaled_bernoulli(m, x) * scaled_bernoulli(m, z)
        + sign * scaled_bernoulli(2 * m, (x - z).abs())
}

#[inline]
pub(crate) fn rk_polynomial_deriv_unchecked(m: usize, x: f64, z: f64) -> f64 {
    let sign = if m % 2 == 1 { 1.0 } else { -1.0 };
    // s = +1 on the diagonal
    let side = if x >= z { 1.0 } else { -1.0 };
    scaled_bernoulli(m - 1, x) * scaled_bernoulli(m, z)
        + sign * side * scaled_bernoulli(2 * m - 1, (x - z).abs())
}

/// Contrast reproducing kernel of the order-`m` polynomial spline.
pub fn rk_polynomial(order: u8, x: f64, z: f64) -> Result<f64> {
    check_order(order)?;
    check_unit(x)?;
    check_unit(z)?;
    Ok(rk_polynomial_unchecked(order as usize, x, z))
}

/// Derivative `d rho(x, z) / dx` of the polynomial contrast kernel.
///
/// `k_{2m}(|x - z|)` differentiates to `s * k_{2m-1}(|x - z|)` with
/// `s = sign(x - z)`, taking `s = +1` at `x = z`. For `m >= 2` both one-sided
/// derivatives agree there since `k_{2m-1}(0) = 0`; the linear spline has a kink.
pub fn rk_polynomial_deriv(order: u8, x: f64, z: f64) -> Result<f64> {
    check_order(order)?;
    check_unit(x)?;
    check_unit(z)?;
    Ok(rk_polynomial_deriv_unchecked(order as usize, x, z))
}

/// Centered indicator kernel for a nominal covariate with `levels` levels.
pub fn rk_nominal(levels: usize, x: usize, z: usize) -> Result<f64> {
    KernelSpec::Nominal { levels }.validate()?;
    for code in [x, z] {
        if !(1..=levels).contains(&code) {
            return Err(Error::OutOfDomain {
                value: code as f64,
                domain: "nominal levels 1..=f",
            });
        }
    }
    let same = if x == z { 1.0 } else { 0.0 };
    Ok(same - 1.0 / levels as f64)
}
